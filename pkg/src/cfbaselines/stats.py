"""Paired significance tests and mean +/- SEM aggregation of evaluation records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as sps

# metric -> True when larger values are better
METRIC_DIRECTION = {"roc_auc": True, "fpar": False, "spread": False}


@dataclass
class TestResult:
    statistic: float
    p_value: float
    test_used: str  # "t" | "wilcoxon" | "none"


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TestResult:
    d = np.asarray(a, np.float64) - np.asarray(b, np.float64)
    n = d.size
    sd = d.std(ddof=1)
    mean = d.mean()
    if sd == 0:
        return TestResult(math.copysign(math.inf, mean) if mean else 0.0, 0.0 if mean else 1.0, "t")
    t = mean / (sd / math.sqrt(n))
    return TestResult(float(t), float(2 * sps.t.sf(abs(t), n - 1)), "t")


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Normal approximation with tie correction; zero differences are dropped."""
    d = np.asarray(a, np.float64) - np.asarray(b, np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return TestResult(0.0, 1.0, "wilcoxon")
    ranks = sps.rankdata(np.abs(d))
    w_plus = ranks[d > 0].sum()
    mean = n * (n + 1) / 4
    _, counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - (counts**3 - counts).sum() / 48
    if var <= 0:
        return TestResult(0.0, 1.0, "wilcoxon")
    z = (w_plus - mean) / math.sqrt(var)
    return TestResult(float(z), float(2 * sps.norm.sf(abs(z))), "wilcoxon")


def looks_normal(d: np.ndarray) -> bool:
    """Moment screen: |skewness| < 1 and |excess kurtosis| < 1."""
    if d.size < 3 or np.allclose(d, d[0]):
        return False
    skew = sps.skew(d)
    kurt = sps.kurtosis(d)  # Fisher: excess kurtosis
    return bool(abs(skew) < 1 and abs(kurt) < 1)


def paired_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> TestResult:
    """Two-sided paired test; t-test when the differences pass the normality screen, else Wilcoxon."""
    a = np.asarray(scores_a, np.float64)
    b = np.asarray(scores_b, np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired scores must be two 1-d sequences of equal length")
    if a.size < 5:
        raise ValueError("paired test needs at least 5 pairs")
    d = a - b
    if np.all(d == 0):
        return TestResult(0.0, 1.0, "none")
    return paired_t_test(a, b) if looks_normal(d) else wilcoxon_signed_rank(a, b)


@dataclass
class Cell:
    mean: float
    sem: float
    n: int
    p_value: float | None = None  # vs the best baseline for this metric; None for the best itself
    test_used: str = ""
    degenerate: bool = False  # single record, SEM set to 0


@dataclass
class AggregateReport:
    cells: dict[tuple[str, str], Cell] = field(default_factory=dict)  # (baseline, metric) -> Cell
    best: dict[str, str] = field(default_factory=dict)  # metric -> baseline

    def baselines(self) -> list[str]:
        return list(dict.fromkeys(b for b, _ in self.cells))

    def metrics(self) -> list[str]:
        return list(dict.fromkeys(m for _, m in self.cells))


def mean_sem(values: Sequence[float]) -> tuple[float, float, int]:
    v = np.asarray(values, np.float64)
    n = v.size
    if n == 0:
        raise ValueError("no values")
    sem = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(v.mean()), sem, n


def aggregate(rows: Iterable[dict], metrics: Sequence[str] | None = None,
              higher_is_better: dict[str, bool] | None = None) -> AggregateReport:
    """Aggregate per-sample rows ``{"sample_id", "baseline", metric: value, ...}``.

    For every metric the best baseline (by mean) is compared to each other
    baseline with :func:`paired_test` over the samples both have values for.
    Metric names not in ``higher_is_better`` default to lower-is-better.
    """
    rows = list(rows)
    direction = dict(METRIC_DIRECTION)
    direction.update(higher_is_better or {})
    if metrics is None:
        metrics = [k for k in rows[0] if k not in ("sample_id", "baseline")] if rows else []
    baselines = list(dict.fromkeys(r["baseline"] for r in rows))
    table: dict[tuple[str, str], dict[int, float]] = {}
    for r in rows:
        for m in metrics:
            v = r.get(m)
            if v is None or (isinstance(v, float) and math.isnan(v)):
                continue
            table.setdefault((r["baseline"], m), {})[r["sample_id"]] = float(v)
    rep = AggregateReport()
    for m in metrics:
        present = [b for b in baselines if (b, m) in table]
        for b in present:
            mean, sem, n = mean_sem(list(table[(b, m)].values()))
            rep.cells[(b, m)] = Cell(mean, sem, n, degenerate=n == 1)
        if not present:
            continue
        sign = 1 if direction.get(m, False) else -1
        best = max(present, key=lambda b: sign * rep.cells[(b, m)].mean)
        rep.best[m] = best
        for b in present:
            if b == best:
                continue
            common = sorted(set(table[(best, m)]) & set(table[(b, m)]))
            if len(common) >= 5:
                res = paired_test([table[(best, m)][s] for s in common], [table[(b, m)][s] for s in common])
                rep.cells[(b, m)].p_value = res.p_value
                rep.cells[(b, m)].test_used = res.test_used
    return rep
