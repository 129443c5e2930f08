"""Spatial pooling operators: average, max, class-token, and generalized mean.

Generalized-mean pooling computes, per channel,

    f_k = ((1/N) * sum_i x_{k,i}^p) ** (1/p)

which interpolates between plain averaging (p = 1) and max pooling
(p -> inf), so raising p shifts weight toward the strongest activations.
All arithmetic is float64 regardless of the stored tensor dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataValidationError
from .feature_store import FeatureMap

# (row0, col0, rows, cols) in patch coordinates.
Region = tuple[int, int, int, int]


class PoolingKind(str, Enum):
    AVG = "avg"
    MAX = "max"
    CLS = "cls"
    GEM = "gem"


@dataclass(frozen=True)
class PoolingSpec:
    """Pooling operator selection.

    ``p`` applies only to GeM. ``clamp_negative`` controls GeM's handling of
    negative activations: clamp to zero before exponentiation (default), or
    raise when disabled, since fractional powers of negatives are undefined.
    """

    kind: PoolingKind = PoolingKind.GEM
    p: float = 3.0
    clamp_negative: bool = True

    def __post_init__(self) -> None:
        if not np.isfinite(self.p) or self.p < 1.0:
            raise DataValidationError(f"GeM exponent must be finite and >= 1, got {self.p}")


@dataclass(frozen=True)
class PooledVector:
    """C pooled channel values plus the patch-coordinate region they came from."""

    values: np.ndarray
    source_region: Region

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise DataValidationError(f"pooled vector must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataValidationError("non-finite value in pooled vector")
        object.__setattr__(self, "values", arr)


def _gem(block: np.ndarray, p: float, clamp_negative: bool) -> np.ndarray:
    """GeM over the spatial axes of a (C, rows, cols) block.

    Factoring out the per-channel max keeps x**p away from overflow for
    large p and makes GeM(p -> inf) -> max exact.
    """
    x = block.reshape(block.shape[0], -1)
    if clamp_negative:
        x = np.maximum(x, 0.0)
    elif np.any(x < 0.0):
        raise DataValidationError(
            "negative activation under GeM with clamping disabled"
        )
    peak = x.max(axis=1)
    out = np.zeros_like(peak)
    live = peak > 0.0
    if np.any(live):
        scaled = x[live] / peak[live, None]
        out[live] = peak[live] * np.mean(scaled**p, axis=1) ** (1.0 / p)
    return out


def pool_region(fmap: FeatureMap, region: Region, spec: PoolingSpec) -> PooledVector:
    """Pool one rectangular patch region of ``fmap`` down to a C-vector."""
    row0, col0, rows, cols = region
    h, w = fmap.height, fmap.width
    if rows < 1 or cols < 1:
        raise DataValidationError(f"empty region {region}")
    if row0 < 0 or col0 < 0 or row0 + rows > h or col0 + cols > w:
        raise DataValidationError(f"region {region} out of bounds for {h}x{w} map")
    if spec.kind is PoolingKind.CLS:
        raise DataValidationError(
            "class-token pooling is not spatial; use pool_cls on an H=W=1 tensor"
        )
    block = fmap.data[:, row0 : row0 + rows, col0 : col0 + cols].astype(np.float64)
    if spec.kind is PoolingKind.AVG:
        values = block.mean(axis=(1, 2))
    elif spec.kind is PoolingKind.MAX:
        values = block.max(axis=(1, 2))
    else:
        values = _gem(block, spec.p, spec.clamp_negative)
    return PooledVector(values=values, source_region=region)


def pool_cls(cls_vector: np.ndarray) -> PooledVector:
    """Pass a class-token vector through unchanged, tagged as a full-map region.

    Class tokens are exported as H=W=1 tensors; this keeps them on the same
    code path as spatial maps downstream.
    """
    arr = np.asarray(cls_vector, dtype=np.float64)
    if arr.ndim != 1:
        raise DataValidationError(f"class-token vector must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataValidationError("non-finite value in class-token vector")
    return PooledVector(values=arr, source_region=(0, 0, 1, 1))
