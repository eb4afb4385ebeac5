import itertools
import math

import numpy as np
import pytest
from scipy import stats as sps

from cfbaselines.stats import (
    aggregate, looks_normal, mean_sem, paired_t_test, paired_test, wilcoxon_signed_rank,
)


def sign_flip_p(d):
    """Exact two-sided sign-flip permutation p-value for the mean difference."""
    d = np.asarray(d, float)
    signs = np.array(list(itertools.product([-1, 1], repeat=len(d))))
    stats = np.abs(signs @ d)
    return float(np.mean(stats >= abs(d.sum()) - 1e-12))


def exact_wilcoxon_p(d):
    """Exact two-sided p for W+ by enumerating all 2^n sign patterns of the ranks."""
    d = np.asarray(d, float)
    d = d[d != 0]
    n = len(d)
    ranks = sps.rankdata(np.abs(d))
    w_obs = ranks[d > 0].sum()
    # all 2^n subsets: bit k of the pattern index selects rank k as positive
    patterns = np.arange(2**n, dtype=np.uint32)[:, None] >> np.arange(n, dtype=np.uint32) & 1
    w = patterns @ ranks
    mean = n * (n + 1) / 4
    return float(np.mean(np.abs(w - mean) >= abs(w_obs - mean) - 1e-9))


class TestPairedTest:
    def test_identical_lists(self):
        res = paired_test([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
        assert res.p_value == 1.0

    def test_t_on_near_constant_differences(self):
        rng = np.random.default_rng(0)
        b = rng.uniform(size=5)
        a = b + 1 + 1e-3 * rng.standard_normal(5)
        assert paired_t_test(a, b).p_value < 0.01

    def test_t_agrees_with_sign_flip_oracle(self):
        # five pairs cannot reach p < 0.01 under sign flips (minimum 2/32), so the
        # reject/accept agreement is checked on twelve
        rng = np.random.default_rng(1)
        for shift in (1.0, 0.0, 0.3):
            b = rng.uniform(size=12)
            a = b + shift + 0.2 * rng.standard_normal(12)
            t = paired_t_test(a, b).p_value
            perm = sign_flip_p(a - b)
            assert (t < 0.01) == (perm < 0.01), (shift, t, perm)

    def test_wilcoxon_positive_differences_against_enumeration(self):
        rng = np.random.default_rng(2)
        d = rng.uniform(0.1, 2.0, size=20)
        res = wilcoxon_signed_rank(d, np.zeros(20))
        exact = exact_wilcoxon_p(d)
        assert exact == pytest.approx(2 / 2**20)
        assert res.p_value < 0.01 and exact < 0.01

    def test_wilcoxon_mixed_signs_close_to_exact(self):
        # no continuity correction: at n = 20 the normal approximation sits within ~0.02
        rng = np.random.default_rng(3)
        for _ in range(3):
            d = rng.standard_normal(20) + 0.4
            assert wilcoxon_signed_rank(d, np.zeros(20)).p_value == pytest.approx(exact_wilcoxon_p(d), abs=0.03)

    def test_matches_scipy(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal((2, 30))
        b = b + 0.3
        a[:3] = b[:3]  # zero differences are dropped
        a[5] = b[5] + 0.5
        a[6] = b[6] + 0.5  # a tie in |d|
        ref_t = sps.ttest_rel(a, b)
        assert paired_t_test(a, b).p_value == pytest.approx(ref_t.pvalue, rel=1e-9)
        ref_w = sps.wilcoxon(a - b, zero_method="wilcox", correction=False, method="approx")
        assert wilcoxon_signed_rank(a, b).p_value == pytest.approx(ref_w.pvalue, rel=1e-9)

    def test_normality_screen_routes_tests(self):
        rng = np.random.default_rng(5)
        b = np.zeros(40)
        gauss = rng.standard_normal(40)
        skewed = rng.exponential(size=40) ** 3
        assert looks_normal(gauss) and paired_test(gauss, b).test_used == "t"
        assert not looks_normal(skewed) and paired_test(skewed, b).test_used == "wilcoxon"

    def test_preconditions(self):
        with pytest.raises(ValueError):
            paired_test([1, 2, 3, 4], [1, 2, 3, 5])
        with pytest.raises(ValueError):
            paired_test([1, 2, 3, 4, 5], [1, 2, 3, 4])


class TestAggregate:
    def test_mean_sem(self):
        mean, sem, n = mean_sem([1, 2, 3])
        assert mean == 2.0 and sem == pytest.approx(1 / math.sqrt(3)) and n == 3

    def test_single_record_flagged(self):
        rep = aggregate([{"sample_id": 0, "baseline": "cf", "roc_auc": 0.9}], ["roc_auc"])
        cell = rep.cells[("cf", "roc_auc")]
        assert cell.sem == 0.0 and cell.degenerate

    def test_best_and_pvalues(self):
        rng = np.random.default_rng(6)
        rows = []
        for s in range(30):
            base = rng.uniform(0.4, 0.6)
            rows.append({"sample_id": s, "baseline": "cf", "roc_auc": base + 0.3, "fpar": 0.3 + 0.01 * rng.standard_normal()})
            rows.append({"sample_id": s, "baseline": "zeros", "roc_auc": base, "fpar": 0.9 + 0.01 * rng.standard_normal()})
        rep = aggregate(rows, ["roc_auc", "fpar"])
        assert rep.best == {"roc_auc": "cf", "fpar": "cf"}
        assert rep.cells[("cf", "roc_auc")].p_value is None
        assert rep.cells[("zeros", "roc_auc")].p_value < 1e-4
        assert rep.cells[("zeros", "fpar")].p_value < 1e-6

    def test_nan_values_skipped(self):
        rows = [{"sample_id": i, "baseline": "a", "m": float("nan") if i == 0 else float(i)} for i in range(4)]
        cell = aggregate(rows, ["m"]).cells[("a", "m")]
        assert cell.n == 3 and cell.mean == 2.0
