"""FPT1 binary tensor files.

Layout: magic bytes ``FPT1`` | u32 LE rank | rank u32 LE extents |
float32 LE payload, row-major. Every module uses this for tensor exchange.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FPT1"

__all__ = ["write_fpt1", "read_fpt1", "MAGIC"]


def write_fpt1(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_fpt1(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an FPT1 file (bad magic {raw[:4]!r})")
    (rank,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    if data.size != count:
        raise ValueError(f"{path}: payload truncated ({data.size} of {count} values)")
    return data.reshape(shape).copy()
