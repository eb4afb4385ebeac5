"""Faithfulness and localization metrics for normalized attribution maps.

Mask overlap (ROC-AUC, FPAR), spatial spread, pixel imputation, and the two
ablation protocols (top-k pixels, growing square at the center of mass).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .blur import gaussian_blur
from .models import Classifier

IMPUTERS = ("mean", "blur", "counterfactual", "blurred_counterfactual", "mean_normal")
TOPK_FRACTIONS = (0.005, 0.01, 0.02, 0.05, 0.10, 0.20)
MASS_CENTER_SIZES = (4, 8, 12, 16, 20, 24, 28, 32)


class UndefinedMetric(ValueError):
    """The metric is undefined for this input (degenerate mask or empty map); skip the sample."""


def roc_auc(attr: np.ndarray, mask: np.ndarray) -> float:
    """Rank-based AUC of attribution scores against a binary mask, ties counted 1/2."""
    scores = np.asarray(attr, dtype=np.float64).ravel()
    labels = np.asarray(mask).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("mask needs at least one positive and one negative pixel")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def fpar(attr: np.ndarray, mask: np.ndarray) -> float:
    """Share of attribution mass outside the mask."""
    a = np.asarray(attr, dtype=np.float64)
    total = a.sum()
    if not total > 0:
        raise UndefinedMetric("attribution map has no mass")
    return float((a * (1 - np.asarray(mask, dtype=np.float64))).sum() / total)


def center_of_mass(attr: np.ndarray) -> tuple[float, float]:
    """Attribution-weighted mean ``(x, y)`` = (column, row)."""
    a = np.asarray(attr, dtype=np.float64)
    total = a.sum()
    if not total > 0:
        raise UndefinedMetric("attribution map has no mass")
    w = a / total  # normalizing first keeps a point mass exactly on its pixel
    rows, cols = np.indices(a.shape)
    return float((w * cols).sum()), float((w * rows).sum())


def spatial_spread(attr: np.ndarray) -> float:
    """Mean over pixels of attribution times Euclidean distance to the center of mass."""
    a = np.asarray(attr, dtype=np.float64)
    xc, yc = center_of_mass(a)
    rows, cols = np.indices(a.shape)
    dist = np.hypot(cols - xc, rows - yc)
    return float((a * dist).sum() / a.size)


@dataclass
class ImputeContext:
    counterfactual: np.ndarray | None = None  # (1, H, W) or (H, W)
    healthy_mean: np.ndarray | None = None  # pixelwise mean of healthy training images
    blur_sigma: float = 20.0


def imputation_source(x: np.ndarray, method: str, ctx: ImputeContext | None = None) -> np.ndarray:
    """The full replacement image a given imputer draws pixels from."""
    ctx = ctx or ImputeContext()
    x = np.asarray(x, np.float32)
    if method == "mean":
        return np.full_like(x, x.mean())
    if method == "blur":
        return gaussian_blur(x, ctx.blur_sigma)
    if method in ("counterfactual", "blurred_counterfactual"):
        if ctx.counterfactual is None:
            raise ValueError(f"{method} imputation needs a counterfactual image")
        cf = np.asarray(ctx.counterfactual, np.float32).reshape(x.shape)
        return cf if method == "counterfactual" else gaussian_blur(cf, ctx.blur_sigma)
    if method == "mean_normal":
        if ctx.healthy_mean is None:
            raise ValueError("mean_normal imputation needs the healthy training mean")
        return np.asarray(ctx.healthy_mean, np.float32).reshape(x.shape)
    raise ValueError(f"unknown imputation method {method!r}; expected one of {IMPUTERS}")


def impute(x: np.ndarray, pixels: np.ndarray, method: str, ctx: ImputeContext | None = None,
           source: np.ndarray | None = None) -> np.ndarray:
    """Replace the pixels selected by ``pixels`` (boolean mask over the last two axes).

    ``source`` may be passed to reuse a precomputed :func:`imputation_source`.
    """
    x = np.asarray(x, np.float32)
    sel = np.asarray(pixels, dtype=bool)
    if sel.shape != x.shape[-2:]:
        raise ValueError(f"pixel mask {sel.shape} does not match image {x.shape}")
    if source is None:
        source = imputation_source(x, method, ctx)
    return np.where(sel, source, x).astype(np.float32)


@dataclass
class AblationCurve:
    fractions: np.ndarray  # ablated share of pixels, starting at 0
    confidences: np.ndarray
    imputer: str
    protocol: str  # "topk" | "mass_center"
    sizes: np.ndarray | None = None  # square side lengths for mass_center

    def area(self) -> float:
        """Trapezoidal area under confidence vs. ablated fraction (lower is better)."""
        return float(np.trapezoid(self.confidences, self.fractions))


def topk_order(attr: np.ndarray) -> np.ndarray:
    """Flat pixel indices by decreasing attribution; ties keep raster order."""
    return np.argsort(-np.asarray(attr, dtype=np.float64).ravel(), kind="stable")


def topk_masks(attr: np.ndarray, fractions: Sequence[float]) -> list[np.ndarray]:
    order = topk_order(attr)
    n = order.size
    out = []
    for f in fractions:
        k = int(round(f * n))
        m = np.zeros(n, dtype=bool)
        m[order[:k]] = True
        out.append(m.reshape(np.shape(attr)))
    return out


def square_mask(shape: tuple[int, int], center_rc: tuple[int, int], size: int) -> np.ndarray:
    """``size`` x ``size`` square centred on ``center_rc``, shifted inward to stay on the image."""
    h, w = shape
    m = np.zeros(shape, dtype=bool)
    if size <= 0:
        return m
    r0 = min(max(center_rc[0] - size // 2, 0), h - size)
    c0 = min(max(center_rc[1] - size // 2, 0), w - size)
    m[max(r0, 0):max(r0, 0) + size, max(c0, 0):max(c0, 0) + size] = True
    return m


def _check_fractions(fractions: Sequence[float]) -> np.ndarray:
    f = np.asarray(fractions, dtype=np.float64)
    if f.size == 0 or np.any(f <= 0) or np.any(f > 1) or np.any(np.diff(f) <= 0):
        raise ValueError("fractions must be strictly increasing within (0, 1]")
    return f


def _confidences(clf: Classifier, images: list[np.ndarray], target: int) -> np.ndarray:
    return clf.predict_proba(np.stack(images))[:, target].astype(np.float64)


def topk_ablation_curve(x, attr, clf: Classifier, target: int, imputer: str, fractions=TOPK_FRACTIONS,
                        ctx: ImputeContext | None = None, source: np.ndarray | None = None) -> AblationCurve:
    f = _check_fractions(fractions)
    x = np.asarray(x, np.float32).reshape(1, 64, 64)
    if source is None:
        source = imputation_source(x, imputer, ctx)
    images = [x] + [impute(x, m, imputer, source=source) for m in topk_masks(attr, f)]
    conf = _confidences(clf, images, target)
    return AblationCurve(np.concatenate([[0.0], f]), conf, imputer, "topk")


def mass_center_ablation_curve(x, attr, clf: Classifier, target: int, imputer: str, sizes=MASS_CENTER_SIZES,
                               ctx: ImputeContext | None = None, source: np.ndarray | None = None) -> AblationCurve:
    s = np.asarray(sizes, dtype=np.int64)
    x = np.asarray(x, np.float32).reshape(1, 64, 64)
    h, w = x.shape[-2:]
    if s.size == 0 or np.any(s <= 0) or np.any(np.diff(s) <= 0) or s[-1] > min(h, w):
        raise ValueError("sizes must be strictly increasing within (0, image side]")
    xc, yc = center_of_mass(attr)
    center = (int(np.rint(yc)), int(np.rint(xc)))
    if source is None:
        source = imputation_source(x, imputer, ctx)
    images = [x] + [impute(x, square_mask((h, w), center, int(k)), imputer, source=source) for k in s]
    conf = _confidences(clf, images, target)
    fr = np.concatenate([[0.0], (s.astype(np.float64) ** 2) / (h * w)])
    return AblationCurve(fr, conf, imputer, "mass_center", np.concatenate([[0], s]))


@dataclass
class EvalRecord:
    sample_id: int
    baseline: str
    roc_auc: float
    fpar: float
    spread: float
    curves: list[AblationCurve] = field(default_factory=list)

    def curve_areas(self) -> dict[str, float]:
        key = {"topk": "auc_topk", "mass_center": "auc_masscenter"}
        return {f"{key[c.protocol]}_{c.imputer}": c.area() for c in self.curves}
