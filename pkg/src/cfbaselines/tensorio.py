"""The CFT1 binary tensor container.

Layout: magic ``b"CFT1"``, little-endian u32 rank, ``rank`` u32 dims, then the
float32 little-endian row-major payload.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CFT1"


class ContainerError(ValueError):
    pass


def dumps(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype="<f4")  # tobytes() is C-order; keeps rank 0
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + arr.tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise ContainerError("not a CFT1 container")
    (rank,) = struct.unpack_from("<I", buf, 4)
    head = 8 + 4 * rank
    if len(buf) < head:
        raise ContainerError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != head + 4 * count:
        raise ContainerError(f"payload has {len(buf) - head} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype="<f4", offset=head).reshape(dims).astype(np.float32)


def save(path: str | os.PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(dumps(array))


def load(path: str | os.PathLike) -> np.ndarray:
    return loads(Path(path).read_bytes())
