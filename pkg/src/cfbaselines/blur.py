"""Separable Gaussian blur with reflect padding (numpy only, outside the autodiff graph)."""

from __future__ import annotations

import math

import numpy as np


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at radius ``ceil(3 sigma)`` and renormalized to sum 1."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3 * sigma)
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _reflect_index(n: int, r: int) -> np.ndarray:
    # half-sample symmetric reflection (..., b, a | a, b, ...), periodic for r >= n
    idx = np.arange(-r, n + r)
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx < n, idx, period - 1 - idx)


def _blur_axis(img: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    n = img.shape[axis]
    padded = np.take(img, _reflect_index(n, r), axis=axis)
    out = np.zeros_like(img, dtype=np.float64)
    for i, w in enumerate(k):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + n)
        out += w * padded[tuple(sl)]
    return out


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Blur the last two axes of ``image``; the result has ``image``'s dtype."""
    k = gaussian_kernel(sigma)
    img = np.asarray(image, dtype=np.float64)
    out = _blur_axis(_blur_axis(img, k, img.ndim - 2), k, img.ndim - 1)
    return out.astype(np.asarray(image).dtype if np.asarray(image).dtype.kind == "f" else np.float32)
