"""Latent-space search for a "normal" counterfactual of an input image.

Starting from the posterior mean of the input, the latent code is moved with
Adam along the gradient of the cross entropy between the classifier's output on
the decoded image and the normal class, until the normal-class probability
reaches a threshold or the iteration budget runs out.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Graph
from .models import Classifier, Vae, classifier_layers
from .optim import AdamState, NumericError, adam_step


@dataclass
class CfConfig:
    lr: float = 0.1
    max_iterations: int = 50
    threshold: float = 0.99
    normal_class: int = 0
    similarity_weight: float = 0.0
    snapshot_every: int = 0  # 0 disables trajectory snapshots

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.lr <= 0 or self.similarity_weight < 0:
            raise ValueError("lr must be positive and similarity_weight non-negative")


@dataclass
class CounterfactualResult:
    z_star: np.ndarray
    x_star: np.ndarray
    iterations_used: int
    final_confidence: float
    converged: bool
    z0: np.ndarray
    history: list[tuple[int, float, float]] = field(default_factory=list)  # (iteration, CE, confidence)
    trajectory: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def write_history_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "ce_loss", "normal_confidence"])
            for it, ce, conf in self.history:
                w.writerow([it, f"{ce:.6f}", f"{conf:.6f}"])


def _objective(clf: Classifier, vae: Vae, cfg: CfConfig) -> Graph:
    g = Graph({**vae.params, **clf.params})
    z = g.input("z", (1, vae.latent_dim))
    image = g.output("image", vae.decoder_layers(g, z))
    logits = classifier_layers(g, image)
    g.output("probs", g.softmax(logits))
    onehot = np.zeros((1, clf.n_classes), np.float32)
    onehot[0, cfg.normal_class] = 1
    ce = g.output("ce", g.cross_entropy(logits, g.const(onehot)))
    if cfg.similarity_weight > 0:
        x = g.input("x", (1, 1, 64, 64))
        sim = g.mse(image, x, reduction="batch")
        g.output("loss", g.add(ce, g.scale(sim, cfg.similarity_weight)))
    else:
        g.output("loss", ce)
    return g


def find_counterfactual(x: np.ndarray, clf: Classifier, vae: Vae, cfg: CfConfig | None = None) -> CounterfactualResult:
    """Search the VAE latent space for a decoded image the classifier calls normal.

    If the threshold is never reached, the iterate with the highest normal-class
    confidence is returned with ``converged=False``.
    """
    cfg = cfg or CfConfig()
    clf._check_class(cfg.normal_class)
    x = np.asarray(x, np.float32).reshape(1, 1, 64, 64)
    mu, _ = vae.encode(x)
    z = mu.copy()
    g = _objective(clf, vae, cfg)
    state = AdamState.like(z, lr=cfg.lr)
    feed = {"x": x} if cfg.similarity_weight > 0 else {}
    res = CounterfactualResult(z, None, 0, -1.0, False, mu[0].copy())
    best = None
    for t in range(cfg.max_iterations + 1):
        out = g.forward({"z": z, **feed})
        ce = float(out["ce"])
        conf = float(out["probs"][0, cfg.normal_class])
        if not (np.isfinite(ce) and np.isfinite(float(out["loss"]))):
            raise NumericError(f"non-finite loss at iteration {t}")
        res.history.append((t, ce, conf))
        if cfg.snapshot_every and t % cfg.snapshot_every == 0:
            res.trajectory.append((t, out["image"][0].copy()))
        if best is None or conf > best[0]:
            best = (conf, z.copy(), out["image"][0].copy(), t)
        if conf >= cfg.threshold:
            res.converged = True
            best = (conf, z.copy(), out["image"][0].copy(), t)
            break
        if t == cfg.max_iterations:
            break
        grad = g.backward("loss", ["z"])["z"]
        z = adam_step(z, grad, state)
    conf, zb, img, _ = best
    res.iterations_used = t
    res.z_star, res.x_star, res.final_confidence = zb[0], img, conf
    if cfg.snapshot_every and (not res.trajectory or res.trajectory[-1][0] != t):
        res.trajectory.append((t, out["image"][0].copy()))
    return res


def default_sigma(z_star: np.ndarray) -> float:
    """Perturbation scale for counterfactual baseline sets: 0.1 times the RMS of ``z_star``."""
    return 0.1 * float(np.sqrt(np.mean(np.square(z_star, dtype=np.float64))))


def sample_latents(z_star: np.ndarray, sigma: float, n: int, seed: int) -> np.ndarray:
    if n < 1 or sigma < 0:
        raise ValueError("need n >= 1 and sigma >= 0")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, len(z_star)))
    return (z_star[None, :] + sigma * noise).astype(np.float32)


def sample_cf_baseline_set(result: CounterfactualResult, vae: Vae, sigma: float | None = None, n: int = 50, seed: int = 0) -> list[np.ndarray]:
    """Decode ``n`` latents drawn from N(z*, sigma^2 I)."""
    if sigma is None:
        sigma = default_sigma(result.z_star)
    images = vae.decode(sample_latents(result.z_star, sigma, n, seed))
    return list(images)
