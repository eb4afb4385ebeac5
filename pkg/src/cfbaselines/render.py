"""8-bit PGM/PPM output for maps and image strips."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensorio


def quantize(v: np.ndarray) -> np.ndarray:
    """``round(255 * v)`` clipped to [0, 255]."""
    return np.clip(np.rint(255.0 * np.asarray(v, np.float64)), 0, 255).astype(np.uint8)


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    g = quantize(gray) if gray.dtype != np.uint8 else gray
    h, w = g.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + g.tobytes())


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.astype(np.uint8).tobytes())


def read_pnm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) written by this module."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM header {fields}")
    ch = 1 if magic == b"P5" else 3
    arr = np.frombuffer(data, np.uint8, count=w * h * ch, offset=pos)
    return arr.reshape(h, w) if ch == 1 else arr.reshape(h, w, 3)


def diverging_rgb(raw: np.ndarray) -> np.ndarray:
    """Blue-white-red map scaled by max |raw|; zero is white."""
    r = np.asarray(raw, np.float64)
    m = np.abs(r).max()
    t = r / m if m > 0 else np.zeros_like(r)
    neg = np.minimum(t, 0)
    pos = np.maximum(t, 0)
    red = 1 + neg
    green = 1 + neg - pos
    blue = 1 - pos
    return quantize(np.stack([red, green, blue], axis=-1))


def _as_2d(arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr)
    while a.ndim > 2 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d map, got shape {np.shape(arr)}")
    return a


def render_map(attr_file: str | Path, colormap: str = "gray", out: str | Path | None = None) -> Path:
    """Render a CFT1 map to PGM (gray, values in [0, 1]) or PPM (diverging, signed)."""
    arr = _as_2d(tensorio.load(attr_file))
    src = Path(attr_file)
    if colormap == "gray":
        out = Path(out) if out else src.with_suffix(".pgm")
        write_pgm(out, arr)
    elif colormap == "diverging":
        out = Path(out) if out else src.with_suffix(".ppm")
        write_ppm(out, diverging_rgb(arr))
    else:
        raise ValueError(f"unknown colormap {colormap!r}; expected 'gray' or 'diverging'")
    return out


def write_strip(path: str | Path, images: list[np.ndarray], gap: int = 2) -> None:
    """Tile images left to right with a white gutter."""
    tiles = [_as_2d(im) for im in images]
    h = max(t.shape[0] for t in tiles)
    w = sum(t.shape[1] for t in tiles) + gap * (len(tiles) - 1)
    canvas = np.ones((h, w))
    x = 0
    for t in tiles:
        canvas[: t.shape[0], x:x + t.shape[1]] = t
        x += t.shape[1] + gap
    write_pgm(path, canvas)
