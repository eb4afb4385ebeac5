"""Path attributions (Integrated Gradients, Expected Gradients) and their baselines.

The attributed scalar is the softmax probability of the target class. Integrals
along the straight path from baseline to input are estimated from input
gradients at interpolation points; all interpolants of one call go through the
classifier in fixed-size batches.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .blur import gaussian_blur
from .counterfactual import CfConfig, CounterfactualResult, default_sigma, find_counterfactual, sample_cf_baseline_set
from .models import Classifier, Vae

VARIANTS = ("zeros", "ones", "blurred", "uniform", "eg", "cf", "egcf")
DISPLAY_NAMES = {
    "zeros": "Zeros", "ones": "Ones", "blurred": "Blurred", "uniform": "Uniform",
    "eg": "EG", "cf": "CF", "egcf": "EG(CF)",
}
SET_VARIANTS = ("eg", "egcf")


@dataclass
class BaselineSpec:
    variant: str
    n: int = 50
    sigma: float | None = None  # blur sigma for "blurred", latent sigma for "egcf"
    seed: int = 0

    def __post_init__(self):
        self.variant = self.variant.lower().replace("(", "").replace(")", "").replace(" ", "")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown baseline variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "blurred" and self.sigma is None:
            self.sigma = 20.0
        if self.variant == "blurred" and not self.sigma > 0:
            raise ValueError("blur sigma must be positive")
        if self.variant in SET_VARIANTS and self.n < 1:
            raise ValueError("set-valued baselines need n >= 1")

    @property
    def is_set(self) -> bool:
        return self.variant in SET_VARIANTS


@dataclass
class BaselineContext:
    """What the data- and model-dependent baselines need."""

    train_images: np.ndarray | None = None
    clf: Classifier | None = None
    vae: Vae | None = None
    cf_config: CfConfig = field(default_factory=CfConfig)
    cf_result: CounterfactualResult | None = None  # reused when already computed for this input


@dataclass
class IgConfig:
    steps: int = 64
    target: int | None = None  # None: the predicted class of the input
    batch_size: int = 64

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")


@dataclass
class EgConfig:
    samples_per_baseline: int = 8
    alpha: str = "stratified"  # or "midpoint"
    seed: int = 0
    target: int | None = None
    batch_size: int = 64

    def __post_init__(self):
        if self.samples_per_baseline < 1:
            raise ValueError("samples_per_baseline must be at least 1")
        if self.alpha not in ("stratified", "midpoint"):
            raise ValueError("alpha must be 'stratified' or 'midpoint'")


@dataclass
class AttributionMap:
    raw: np.ndarray  # (H, W) signed
    normalized: np.ndarray  # (H, W) in [0, 1]
    target: int
    baseline: str = ""
    steps: int = 0
    seed: int | None = None


def normalize_attribution(raw: np.ndarray, percentile: float = 99.9) -> np.ndarray:
    """abs, cap at the given percentile (linear interpolation), min-max to [0, 1].

    A map that is constant after capping becomes all zeros.
    """
    a = np.abs(np.asarray(raw, dtype=np.float64))
    cap = np.percentile(a, percentile)
    a = np.minimum(a, cap)
    lo, hi = a.min(), a.max()
    if not hi > lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def _target(clf: Classifier, x: np.ndarray, target: int | None) -> int:
    if target is not None:
        clf._check_class(target)
        return target
    return int(np.argmax(clf.predict_proba(x)[0]))


def midpoint_alphas(steps: int) -> np.ndarray:
    return (np.arange(steps) + 0.5) / steps


def stratified_alphas(k: int, rng: np.random.Generator) -> np.ndarray:
    return (np.arange(k) + rng.uniform(size=k)) / k


def _path_terms(x, baselines, alphas, clf, target, batch_size) -> np.ndarray:
    """For each baseline j, ``(x - b_j) * mean_k grad C(b_j + a_jk (x - b_j))``."""
    x = np.asarray(x, np.float32).reshape(1, 64, 64)
    bs = np.asarray(baselines, np.float32).reshape(-1, 1, 64, 64)
    diffs = x[None] - bs
    pairs = [(j, a) for j in range(len(bs)) for a in alphas[j]]
    sums = np.zeros(bs.shape, dtype=np.float64)
    for s in range(0, len(pairs), batch_size):
        chunk = pairs[s:s + batch_size]
        js = np.array([j for j, _ in chunk])
        al = np.array([a for _, a in chunk], dtype=np.float32)[:, None, None, None]
        points = bs[js] + al * diffs[js]
        _, grads = clf.prob_and_grad(points, target)
        for row, j in enumerate(js):
            sums[j] += grads[row]
    counts = np.array([len(a) for a in alphas], dtype=np.float64)[:, None, None, None]
    return (diffs * (sums / counts).astype(np.float32))[:, 0]


def integrated_gradients(x: np.ndarray, baseline: np.ndarray, clf: Classifier, cfg: IgConfig | None = None) -> AttributionMap:
    """Midpoint-rule Integrated Gradients of the target-class probability."""
    cfg = cfg or IgConfig()
    target = _target(clf, x, cfg.target)
    raw = _path_terms(x, [baseline], [midpoint_alphas(cfg.steps)], clf, target, cfg.batch_size)[0]
    return AttributionMap(raw, normalize_attribution(raw), target, steps=cfg.steps)


def expected_gradients(x: np.ndarray, baselines: Sequence[np.ndarray], clf: Classifier, cfg: EgConfig | None = None) -> AttributionMap:
    """Monte-Carlo Expected Gradients over a finite baseline set.

    With ``alpha="stratified"`` each baseline gets one uniform draw in each of
    ``samples_per_baseline`` equal strata of [0, 1].
    """
    cfg = cfg or EgConfig()
    if len(baselines) < 1:
        raise ValueError("need at least one baseline")
    target = _target(clf, x, cfg.target)
    k = cfg.samples_per_baseline
    if cfg.alpha == "midpoint":
        alphas = [midpoint_alphas(k)] * len(baselines)
    else:
        rng = np.random.default_rng(cfg.seed)
        alphas = [stratified_alphas(k, rng) for _ in baselines]
    terms = _path_terms(x, baselines, alphas, clf, target, cfg.batch_size)
    raw = terms.mean(axis=0)
    return AttributionMap(raw, normalize_attribution(raw), target, steps=k, seed=cfg.seed)


def build_baseline(spec: BaselineSpec, x: np.ndarray, ctx: BaselineContext | None = None) -> list[np.ndarray]:
    """Materialize the baseline image(s) for ``x``; every image has shape (1, 64, 64)."""
    ctx = ctx or BaselineContext()
    x = np.asarray(x, np.float32).reshape(1, 64, 64)
    v = spec.variant
    if v == "zeros":
        return [np.zeros_like(x)]
    if v == "ones":
        return [np.ones_like(x)]
    if v == "blurred":
        return [gaussian_blur(x[0], spec.sigma)[None].astype(np.float32)]
    if v == "uniform":
        rng = np.random.default_rng(spec.seed)
        return [rng.uniform(size=x.shape).astype(np.float32)]
    if v == "eg":
        if ctx.train_images is None or len(ctx.train_images) == 0:
            raise ValueError("EG baselines need training images")
        pool = len(ctx.train_images)
        rng = np.random.default_rng(spec.seed)
        if pool < spec.n:
            warnings.warn(f"only {pool} training samples for {spec.n} EG baselines; sampling with replacement")
            idx = rng.integers(0, pool, size=spec.n)
        else:
            idx = rng.choice(pool, size=spec.n, replace=False)
        return [np.asarray(ctx.train_images[i], np.float32).reshape(1, 64, 64) for i in idx]
    # counterfactual variants
    result = ctx.cf_result
    if result is None:
        if ctx.clf is None or ctx.vae is None:
            raise ValueError("counterfactual baselines need a classifier and a VAE")
        result = ctx.cf_result = find_counterfactual(x, ctx.clf, ctx.vae, ctx.cf_config)
    if v == "cf":
        return [result.x_star.reshape(1, 64, 64)]
    if ctx.vae is None:
        raise ValueError("EG(CF) baselines need a VAE")
    sigma = default_sigma(result.z_star) if spec.sigma is None else spec.sigma
    return [b.reshape(1, 64, 64) for b in sample_cf_baseline_set(result, ctx.vae, sigma, spec.n, spec.seed)]


def attribute(x: np.ndarray, spec: BaselineSpec, ctx: BaselineContext, clf: Classifier,
              ig: IgConfig | None = None, eg: EgConfig | None = None, target: int | None = None) -> AttributionMap:
    """IG for single-baseline variants, EG for the set-valued ones."""
    baselines = build_baseline(spec, x, ctx)
    if spec.is_set:
        eg = eg or EgConfig(seed=spec.seed)
        eg = EgConfig(eg.samples_per_baseline, eg.alpha, eg.seed, target if target is not None else eg.target, eg.batch_size)
        amap = expected_gradients(x, baselines, clf, eg)
    else:
        ig = ig or IgConfig()
        ig = IgConfig(ig.steps, target if target is not None else ig.target, ig.batch_size)
        amap = integrated_gradients(x, baselines[0], clf, ig)
    amap.baseline = spec.variant
    return amap
