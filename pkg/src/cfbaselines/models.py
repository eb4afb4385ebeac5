"""The classifier and the convolutional VAE, their losses, and their trainers.

Both models keep their weights in a flat ``dict[str, ndarray]`` so several
graphs (inference, training, the counterfactual objective) can share them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio
from .autodiff import Graph
from .optim import Adam, NumericError
from .synth import Dataset

IMAGE_SHAPE = (1, 64, 64)
LEAK = 0.01


@dataclass
class TrainConfig:
    lr: float = 3e-3
    epochs: int = 20
    batch_size: int = 32
    beta: float = 2.0
    class_weighting: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.beta < 0:
            raise ValueError(f"invalid training config {self}")


def _he(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def _check_images(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.shape == IMAGE_SHAPE:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != IMAGE_SHAPE:
        raise ValueError(f"expected image(s) of shape {IMAGE_SHAPE}, got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# classifier


def classifier_layers(g: Graph, x: int, prefix: str = "clf.") -> int:
    """conv -> leaky-ReLU three times, global average pool, affine head. Returns logits."""
    h = x
    for i in range(1, 4):
        h = g.conv2d(h, g.param(f"{prefix}conv{i}.w"), g.param(f"{prefix}conv{i}.b"), stride=2, padding=1)
        h = g.leaky_relu(h, LEAK)
    h = g.mean(h, axes=(2, 3))
    return g.linear(h, g.param(f"{prefix}head.w"), g.param(f"{prefix}head.b"))


class Classifier:
    channels = (8, 16, 32)

    def __init__(self, n_classes: int = 2, seed: int = 0, params: dict | None = None):
        self.n_classes = n_classes
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            c_in = 1
            for i, c in enumerate(self.channels, start=1):
                params[f"clf.conv{i}.w"] = _he(rng, (c, c_in, 3, 3), c_in * 9)
                params[f"clf.conv{i}.b"] = np.zeros(c, np.float32)
                c_in = c
            params["clf.head.w"] = _he(rng, (n_classes, c_in), c_in)
            params["clf.head.b"] = np.zeros(n_classes, np.float32)
        self.params = params
        self._graphs: dict[str, Graph] = {}

    def _graph(self, kind: str, class_weights=None) -> Graph:
        key = kind if class_weights is None else f"{kind}:{tuple(class_weights)}"
        g = self._graphs.get(key)
        if g is not None:
            return g
        g = Graph(self.params)
        x = g.input("x", (None,) + IMAGE_SHAPE)
        logits = g.output("logits", classifier_layers(g, x))
        probs = g.output("probs", g.softmax(logits))
        if kind == "train":
            t = g.input("target", (None, self.n_classes))
            g.output("loss", g.cross_entropy(logits, t, class_weights))
        elif kind == "target":
            t = g.input("onehot", (None, self.n_classes))
            g.output("score", g.sum(g.mul(probs, t)))
        self._graphs[key] = g
        return g

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._graph("infer").forward({"x": _check_images(x)})["logits"]

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = _check_images(x)
        g = self._graph("infer")
        return np.concatenate([g.forward({"x": x[i:i + batch_size]})["probs"] for i in range(0, len(x), batch_size)])

    def prob_and_grad(self, x: np.ndarray, class_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Softmax probability of ``class_id`` for each image and its input gradient."""
        x = _check_images(x)
        self._check_class(class_id)
        g = self._graph("target")
        onehot = np.zeros((len(x), self.n_classes), np.float32)
        onehot[:, class_id] = 1
        out = g.forward({"x": x, "onehot": onehot})
        grad = g.backward("score", ["x"])["x"]
        return out["probs"][:, class_id].copy(), grad

    def _check_class(self, class_id: int) -> None:
        if not 0 <= class_id < self.n_classes:
            raise ValueError(f"class id {class_id} out of range for {self.n_classes} classes")


def classify_confidence(clf: Classifier, x: np.ndarray, class_id: int) -> float:
    """Softmax probability that ``x`` belongs to ``class_id``."""
    clf._check_class(class_id)
    return float(clf.predict_proba(x)[0, class_id])


def class_weights_for(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Inverse class frequencies, scaled to mean 1."""
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError(f"every class needs at least one sample, got counts {counts.tolist()}")
    inv = 1.0 / counts
    return (inv / inv.mean()).astype(np.float32)


def weighted_cross_entropy(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    per = -logp[np.arange(len(labels)), labels]
    w = np.ones(len(labels)) if weights is None else np.asarray(weights, np.float64)[labels]
    return float((w * per).sum() / w.sum())


def _onehot(labels: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(labels), n), np.float32)
    out[np.arange(len(labels)), labels] = 1
    return out


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                w.writerow([e, f"{tr:.6f}", f"{va:.6f}"])


def _split_arrays(data: Dataset, split: str):
    if data.splits is None:
        return (data.images, data.labels) if split == "train" else (data.images[:0], data.labels[:0])
    idx = data.indices(split)
    return data.images[idx], data.labels[idx]


def train_classifier(data: Dataset, cfg: TrainConfig, n_classes: int = 2) -> tuple[Classifier, TrainHistory]:
    x, y = _split_arrays(data, "train")
    xv, yv = _split_arrays(data, "val")
    weights = class_weights_for(y, n_classes) if cfg.class_weighting else np.ones(n_classes, np.float32)
    clf = Classifier(n_classes, seed=cfg.seed)
    g = clf._graph("train", weights.tolist())
    opt = Adam(clf.params, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    names = sorted(clf.params)
    hist = TrainHistory()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            loss = float(g.forward({"x": x[b], "target": _onehot(y[b], n_classes)})["loss"])
            if not np.isfinite(loss):
                raise NumericError("classifier loss became non-finite")
            total += loss * len(b)
            opt.step(g.backward("loss", names))
        hist.train_loss.append(total / len(x))
        hist.val_loss.append(
            weighted_cross_entropy(clf.logits(xv), yv, weights) if len(xv) else float("nan")
        )
    return clf, hist


# ---------------------------------------------------------------------------
# VAE


class Vae:
    enc_channels = (16, 32, 64)
    latent_dim = 32

    def __init__(self, latent_dim: int = 32, seed: int = 0, params: dict | None = None):
        self.latent_dim = latent_dim
        c3 = self.enc_channels[-1]
        self.flat = c3 * 8 * 8
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            c_in = 1
            for i, c in enumerate(self.enc_channels, start=1):
                params[f"enc.conv{i}.w"] = _he(rng, (c, c_in, 4, 4), c_in * 16)
                params[f"enc.conv{i}.b"] = np.zeros(c, np.float32)
                c_in = c
            for head in ("mu", "logvar"):
                params[f"enc.{head}.w"] = (rng.standard_normal((latent_dim, self.flat)) * 0.01 / np.sqrt(self.flat)).astype(np.float32)
                params[f"enc.{head}.b"] = np.zeros(latent_dim, np.float32)
            params["dec.fc.w"] = _he(rng, (self.flat, latent_dim), latent_dim)
            params["dec.fc.b"] = np.zeros(self.flat, np.float32)
            dec = list(reversed(self.enc_channels)) + [1]
            for i in range(3):
                params[f"dec.deconv{i + 1}.w"] = _he(rng, (dec[i], dec[i + 1], 4, 4), dec[i] * 4)
                params[f"dec.deconv{i + 1}.b"] = np.zeros(dec[i + 1], np.float32)
        self.params = params
        self._graphs: dict[str, Graph] = {}

    def encoder_layers(self, g: Graph, x: int) -> tuple[int, int]:
        h = x
        for i in range(1, len(self.enc_channels) + 1):
            h = g.conv2d(h, g.param(f"enc.conv{i}.w"), g.param(f"enc.conv{i}.b"), stride=2, padding=1)
            h = g.leaky_relu(h, LEAK)
        h = g.reshape(h, (self.flat,))
        mu = g.linear(h, g.param("enc.mu.w"), g.param("enc.mu.b"))
        logvar = g.linear(h, g.param("enc.logvar.w"), g.param("enc.logvar.b"))
        return mu, logvar

    def decoder_layers(self, g: Graph, z: int) -> int:
        h = g.leaky_relu(g.linear(z, g.param("dec.fc.w"), g.param("dec.fc.b")), LEAK)
        h = g.reshape(h, (self.enc_channels[-1], 8, 8))
        for i in range(1, 4):
            h = g.conv_transpose2d(h, g.param(f"dec.deconv{i}.w"), g.param(f"dec.deconv{i}.b"), stride=2, padding=1)
            h = g.leaky_relu(h, LEAK) if i < 3 else g.sigmoid(h)
        return h

    def _graph(self, kind: str, beta: float = 0.0) -> Graph:
        key = f"{kind}:{beta}"
        g = self._graphs.get(key)
        if g is not None:
            return g
        g = Graph(self.params)
        if kind == "encode":
            x = g.input("x", (None,) + IMAGE_SHAPE)
            mu, logvar = self.encoder_layers(g, x)
            g.output("mu", mu)
            g.output("logvar", logvar)
        elif kind == "decode":
            z = g.input("z", (None, self.latent_dim))
            g.output("image", self.decoder_layers(g, z))
        elif kind == "train":
            x = g.input("x", (None,) + IMAGE_SHAPE)
            eps = g.input("eps", (None, self.latent_dim))
            mu, logvar = self.encoder_layers(g, x)
            z = g.add(mu, g.mul(g.exp(g.scale(logvar, 0.5)), eps))
            recon = g.output("recon", self.decoder_layers(g, z))
            rec = g.output("rec", g.mse(recon, x, reduction="batch"))
            if beta > 0:
                kl = g.output("kl", g.gaussian_kl(mu, logvar))
                g.output("loss", g.add(rec, g.scale(kl, beta)))
            else:
                g.output("loss", rec)
        self._graphs[key] = g
        return g

    def encode(self, x: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        x = _check_images(x)
        g = self._graph("encode")
        outs = [g.forward({"x": x[i:i + batch_size]}) for i in range(0, len(x), batch_size)]
        return np.concatenate([o["mu"] for o in outs]), np.concatenate([o["logvar"] for o in outs])

    def decode(self, z: np.ndarray, batch_size: int = 256) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        if z.ndim == 1:
            z = z[None]
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"latent must have {self.latent_dim} entries, got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent contains non-finite values")
        g = self._graph("decode")
        return np.concatenate([g.forward({"z": z[i:i + batch_size]})["image"] for i in range(0, len(z), batch_size)])


def encode(vae: Vae, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and log-variance for a single image ``(1, 64, 64)``."""
    mu, logvar = vae.encode(x)
    return mu[0], logvar[0]


def decode(vae: Vae, z: np.ndarray) -> np.ndarray:
    """Decode one latent vector to a ``(1, 64, 64)`` image in (0, 1)."""
    return vae.decode(z)[0]


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float:
    mu = np.atleast_2d(np.asarray(mu, np.float64))
    logvar = np.atleast_2d(np.asarray(logvar, np.float64))
    return float((-0.5 * (1 + logvar - mu**2 - np.exp(logvar))).sum() / mu.shape[0])


def vae_loss(x, x_recon, mu, logvar, beta: float) -> float:
    """Per-image summed squared error plus ``beta`` times the KL to N(0, I), batch-averaged."""
    x = np.asarray(x, np.float64)
    x_recon = np.asarray(x_recon, np.float64)
    if x.shape != x_recon.shape or np.shape(mu) != np.shape(logvar):
        raise ValueError("shape mismatch in vae_loss")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    n = np.atleast_2d(np.asarray(mu)).shape[0]
    rec = float(((x - x_recon) ** 2).sum() / n)
    return rec + beta * gaussian_kl(mu, logvar)


def train_vae(data: Dataset, cfg: TrainConfig, latent_dim: int = 32) -> tuple[Vae, TrainHistory]:
    x, _ = _split_arrays(data, "train")
    xv, _ = _split_arrays(data, "val")
    vae = Vae(latent_dim, seed=cfg.seed)
    g = vae._graph("train", cfg.beta)
    opt = Adam(vae.params, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(11,)))
    names = sorted(vae.params)
    hist = TrainHistory()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            eps = rng.standard_normal((len(b), latent_dim)).astype(np.float32)
            loss = float(g.forward({"x": x[b], "eps": eps})["loss"])
            if not np.isfinite(loss):
                raise NumericError("VAE loss became non-finite")
            total += loss * len(b)
            opt.step(g.backward("loss", names))
        hist.train_loss.append(total / len(x))
        hist.val_loss.append(vae_eval_loss(vae, xv, cfg.beta) if len(xv) else float("nan"))
    return vae, hist


def vae_eval_loss(vae: Vae, x: np.ndarray, beta: float) -> float:
    """Loss with the posterior mean substituted for the sampled latent."""
    mu, logvar = vae.encode(x)
    return vae_loss(x, vae.decode(mu), mu, logvar, beta)


def reconstruction_mse(vae: Vae, x: np.ndarray) -> float:
    """Per-pixel mean squared error of ``decode(mu(x))`` against ``x``."""
    x = _check_images(x)
    mu, _ = vae.encode(x)
    return float(np.mean((vae.decode(mu) - x) ** 2))


# ---------------------------------------------------------------------------
# checkpoints: one CFT1 file per tensor plus manifest.txt


def save_checkpoint(model: Classifier | Vae, directory: str | Path, hyper: dict | None = None) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    kind = "classifier" if isinstance(model, Classifier) else "vae"
    meta = {"kind": kind}
    meta.update({"n_classes": model.n_classes} if kind == "classifier" else {"latent_dim": model.latent_dim})
    meta.update(hyper or {})
    lines = [f"# {json.dumps(meta, sort_keys=True)}"]
    written = []
    for name in sorted(model.params):
        arr = model.params[name]
        fname = f"{name}.cft"
        tensorio.save(d / fname, arr)
        written.append(d / fname)
        lines.append(f"{name}\t{fname}\t{'x'.join(map(str, arr.shape))}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return written + [d / "manifest.txt"]


def load_checkpoint(directory: str | Path) -> Classifier | Vae:
    d = Path(directory)
    lines = (d / "manifest.txt").read_text(encoding="utf-8").splitlines()
    meta = json.loads(lines[0][2:])
    params = {}
    for line in lines[1:]:
        name, fname, shape = line.split("\t")
        arr = tensorio.load(d / fname)
        if "x".join(map(str, arr.shape)) != shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, manifest says {shape}")
        params[name] = arr
    if meta["kind"] == "classifier":
        return Classifier(meta["n_classes"], params=params)
    return Vae(meta["latent_dim"], params=params)
