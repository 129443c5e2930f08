"""Writer for the engine's binary tensor format.

The byte layout is the interface contract with the retrieval engine, kept
deliberately free of any code dependency on it: magic "CVFM", version
u16 = 1, dtype u16 = 0 (float32), C/H/W u32, 8 reserved zero bytes, then
C*H*W little-endian float32 values (channel-major, row-major per channel).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CVFM"
VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sHHIII8s")


def write_tensor(data: np.ndarray, path: str | Path) -> None:
    """Write a (C, H, W) float array as a tensor file."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"expected a (C, H, W) tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite value in tensor")
    c, h, w = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, c, h, w, b"\x00" * 8)
    Path(path).write_bytes(header + arr.astype("<f4", copy=False).tobytes())
