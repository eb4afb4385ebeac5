"""Synthetic 64x64 image families with pathology masks known by construction.

``band``: a bright vertical band; pathological samples have a contiguous run of
rows where the band is switched off entirely (the class-defining feature is
*absent* signal). ``blob``: a smooth textured background; pathological samples
carry an added bright Gaussian blob (the class-defining feature is *present*).

Every sample is drawn from its own numpy ``Generator`` seeded with
``(seed, family, index)``, so datasets regenerate bit-identically and samples
can be produced in any order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensorio
from .blur import gaussian_blur

SIZE = 64
NORMAL, PATHOLOGICAL = 0, 1
CLASS_NAMES = ("normal", "pathological")
_FAMILY_KEYS = {"band": 1, "blob": 2}


@dataclass
class Sample:
    image: np.ndarray  # (1, 64, 64) float32 in [0, 1]
    label: int
    mask: np.ndarray  # (64, 64) uint8


@dataclass
class Dataset:
    images: np.ndarray  # (N, 1, 64, 64) float32
    labels: np.ndarray  # (N,) int64
    masks: np.ndarray  # (N, 64, 64) uint8
    family: str
    seed: int
    params: dict = field(default_factory=dict)
    splits: np.ndarray | None = None  # (N,) of "train" | "val" | "test"
    clean: np.ndarray | None = None  # pre-noise images, kept for verification

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.images[i], int(self.labels[i]), self.masks[i])

    def indices(self, split: str) -> np.ndarray:
        if self.splits is None:
            raise ValueError("dataset has no split tags; call split_dataset first")
        return np.flatnonzero(self.splits == split)

    def subset(self, split: str) -> "Dataset":
        idx = self.indices(split)
        return Dataset(
            self.images[idx], self.labels[idx], self.masks[idx], self.family, self.seed,
            dict(self.params), self.splits[idx], None if self.clean is None else self.clean[idx],
        )


def _sample_rng(seed: int, family: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_FAMILY_KEYS[family], index)))


def _add_noise(clean: np.ndarray, rng: np.random.Generator, level: float) -> np.ndarray:
    noise = rng.uniform(-level, level, size=clean.shape)
    return np.clip(clean + noise, 0.0, 1.0)


def band_sample(index: int, label: int, seed: int, gap_fraction_range=(0.2, 0.5), noise_level: float = 0.05):
    """One band image. Returns ``(noisy, clean, mask)``."""
    rng = _sample_rng(seed, "band", index)
    center = rng.uniform(20, SIZE - 20)
    half_width = rng.uniform(5, 8)
    phase = rng.uniform(0, 2 * math.pi)
    cols = np.arange(SIZE)
    rows = np.arange(SIZE)
    offset = np.abs(cols - center)
    in_band = offset <= half_width
    across = np.where(in_band, 0.75 + 0.25 * np.cos(0.5 * math.pi * np.minimum(offset / half_width, 1.0)), 0.0)
    along = 0.92 + 0.08 * np.sin(2 * math.pi * rows / SIZE + phase)
    background = 0.0
    clean = np.where(in_band[None, :], across[None, :] * along[:, None], background)
    mask = np.zeros((SIZE, SIZE), dtype=np.uint8)
    # the gap geometry is drawn for every sample to keep the streams aligned across labels
    frac = rng.uniform(*gap_fraction_range)
    length = int(round(frac * SIZE))
    margin = 4
    if length < 1 or length > SIZE - 2 * margin:
        raise ValueError(f"gap of {length} rows does not fit inside the image")
    start = int(rng.integers(margin, SIZE - margin - length + 1))
    if label == PATHOLOGICAL:
        gap_rows = slice(start, start + length)
        clean[gap_rows, in_band] = 0.0
        mask[gap_rows, in_band] = 1
    noisy = _add_noise(clean, rng, noise_level)
    return noisy.astype(np.float32), clean.astype(np.float32), mask


def blob_sample(index: int, label: int, seed: int, blob_radius_range=(4.0, 8.0), noise_level: float = 0.05):
    """One blob image. ``blob_radius_range`` bounds the half-maximum radius in pixels."""
    rng = _sample_rng(seed, "blob", index)
    field_ = gaussian_blur(rng.uniform(size=(SIZE, SIZE)), 3.0)
    field_ = (field_ - field_.min()) / max(field_.max() - field_.min(), 1e-12)
    clean = 0.2 + 0.3 * field_
    r_min, r_max = blob_radius_range
    radius = rng.uniform(r_min, r_max)
    amp = rng.uniform(0.4, 0.5)
    margin = r_max + 2
    cy, cx = rng.uniform(margin, SIZE - 1 - margin, size=2)
    mask = np.zeros((SIZE, SIZE), dtype=np.uint8)
    if label == PATHOLOGICAL:
        yy, xx = np.mgrid[0:SIZE, 0:SIZE]
        s = radius / math.sqrt(2 * math.log(2))
        blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        clean = clean + blob
        mask = (blob > 0.5 * amp).astype(np.uint8)
    clean = np.clip(clean, 0.0, 1.0)
    noisy = _add_noise(clean, rng, noise_level)
    return noisy.astype(np.float32), clean.astype(np.float32), mask


def _assemble(n: int, family: str, seed: int, params: dict, make) -> Dataset:
    if n < 10:
        raise ValueError("need at least 10 samples")
    labels = np.arange(n) % 2  # exact 50/50 balance, interleaved
    images = np.empty((n, 1, SIZE, SIZE), dtype=np.float32)
    clean = np.empty_like(images)
    masks = np.empty((n, SIZE, SIZE), dtype=np.uint8)
    for i in range(n):
        images[i, 0], clean[i, 0], masks[i] = make(i, int(labels[i]))
    return Dataset(images, labels.astype(np.int64), masks, family, seed, params, None, clean)


def generate_band_dataset(n: int, gap_fraction_range=(0.2, 0.5), noise_level: float = 0.05, seed: int = 0) -> Dataset:
    lo, hi = gap_fraction_range
    if not 0 < lo <= hi < 1:
        raise ValueError(f"invalid gap fraction range {gap_fraction_range}")
    if noise_level < 0:
        raise ValueError("noise_level must be non-negative")
    params = {"gap_fraction_range": [float(lo), float(hi)], "noise_level": float(noise_level)}
    return _assemble(n, "band", seed, params,
                     lambda i, y: band_sample(i, y, seed, (lo, hi), noise_level))


def generate_blob_dataset(n: int, blob_radius_range=(4.0, 8.0), noise_level: float = 0.05, seed: int = 0) -> Dataset:
    lo, hi = blob_radius_range
    if not 0 < lo <= hi or hi + 2 >= SIZE / 2:
        raise ValueError(f"invalid blob radius range {blob_radius_range}")
    params = {"blob_radius_range": [float(lo), float(hi)], "noise_level": float(noise_level)}
    return _assemble(n, "blob", seed, params,
                     lambda i, y: blob_sample(i, y, seed, (lo, hi), noise_level))


SPLIT_NAMES = ("train", "val", "test")


def split_dataset(ds: Dataset, fractions: Sequence[float] = (0.6, 0.1, 0.3), seed: int = 0) -> Dataset:
    """Tag every sample train/val/test, stratified by class. Returns a new Dataset."""
    fr = np.asarray(fractions, dtype=np.float64)
    if len(fr) != 3 or np.any(fr < 0) or not math.isclose(fr.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(99,)))
    tags = np.empty(len(ds), dtype=object)
    for cls in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == cls)
        idx = idx[rng.permutation(len(idx))]
        counts = _largest_remainder(len(idx), fr)
        start = 0
        for name, c in zip(SPLIT_NAMES, counts):
            tags[idx[start:start + c]] = name
            start += c
    for name, f in zip(SPLIT_NAMES, fr):
        if f > 0 and not np.any(tags == name):
            raise ValueError(f"fraction {f} leaves split {name!r} empty")
    out = Dataset(ds.images, ds.labels, ds.masks, ds.family, ds.seed, dict(ds.params), tags.astype(str), ds.clean)
    out.params["split_fractions"] = [float(f) for f in fr]
    out.params["split_seed"] = int(seed)
    return out


def _largest_remainder(n: int, fr: np.ndarray) -> list[int]:
    raw = fr * n
    base = np.floor(raw).astype(int)
    order = np.argsort(-(raw - base), kind="stable")
    for j in order[: n - base.sum()]:
        base[j] += 1
    return base.tolist()


# ---------------------------------------------------------------------------
# on-disk layout: images/NNNNNN.cft, masks/NNNNNN.cft, labels.csv, meta.txt


def save_dataset(ds: Dataset, directory: str | Path) -> list[Path]:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    (d / "masks").mkdir(exist_ok=True)
    written = []
    for i in range(len(ds)):
        for sub, arr in (("images", ds.images[i]), ("masks", ds.masks[i].astype(np.float32))):
            p = d / sub / f"{i:06d}.cft"
            tensorio.save(p, arr)
            written.append(p)
    with open(d / "labels.csv", "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label", "split", "family"])
        for i in range(len(ds)):
            split = "" if ds.splits is None else ds.splits[i]
            w.writerow([i, int(ds.labels[i]), split, ds.family])
    with open(d / "meta.txt", "w", newline="\n", encoding="utf-8") as fh:
        fh.write(f"seed={ds.seed}\nfamily={ds.family}\nn={len(ds)}\n")
        for k in sorted(ds.params):
            fh.write(f"{k}={ds.params[k]}\n")
    written += [d / "labels.csv", d / "meta.txt"]
    return written


def load_dataset(directory: str | Path) -> Dataset:
    d = Path(directory)
    meta = dict(line.split("=", 1) for line in (d / "meta.txt").read_text().splitlines() if "=" in line)
    with open(d / "labels.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    n = len(rows)
    images = np.stack([tensorio.load(d / "images" / f"{i:06d}.cft") for i in range(n)])
    masks = np.stack([tensorio.load(d / "masks" / f"{i:06d}.cft") for i in range(n)]).astype(np.uint8)
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    splits = np.array([r["split"] for r in rows]) if rows and rows[0]["split"] else None
    return Dataset(images, labels, masks, meta["family"], int(meta["seed"]), {}, splits)
