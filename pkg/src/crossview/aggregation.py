"""Hierarchical multi-scale descriptor aggregation.

For each scale n the patch grid is partitioned into an n x n grid of
non-overlapping regions (boundaries at round(i*H/n), round(j*W/n)). Region
vectors are pooled, individually L2-normalized (classic regional-aggregation
practice; a flag disables it), summed, and the per-scale sum is weighted by
the decay factor 1/n^alpha before the cross-scale sum is L2-normalized into
the final descriptor. Large alpha therefore suppresses fine grids and the
descriptor converges to the single global region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .descriptors import Descriptor
from .errors import DataValidationError, NumericalError
from .feature_store import FeatureMap
from .pooling import PoolingKind, PoolingSpec, pool_cls, pool_region


@dataclass(frozen=True)
class AggregationSpec:
    pooling: PoolingSpec = field(default_factory=PoolingSpec)
    scales: tuple[int, ...] = (1, 2, 3)
    alpha: float = 6.0
    region_norm: bool = True
    final_norm: str = "l2"

    def __post_init__(self) -> None:
        if not self.scales:
            raise DataValidationError("scales must be non-empty")
        if any(n < 1 for n in self.scales):
            raise DataValidationError(f"scales must be positive, got {self.scales}")
        if list(self.scales) != sorted(set(self.scales)):
            raise DataValidationError(
                f"scales must be strictly increasing, got {self.scales}"
            )
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise DataValidationError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.final_norm != "l2":
            raise DataValidationError(f"unknown final_norm '{self.final_norm}'")
        object.__setattr__(self, "scales", tuple(int(n) for n in self.scales))


def grid_boundaries(extent: int, n: int) -> list[int]:
    """Region boundaries round(i*extent/n) for i = 0..n, computed exactly."""
    return [(2 * i * extent + n) // (2 * n) for i in range(n + 1)]


def _normalized(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    # A fully dead region contributes nothing rather than 0/0.
    return vec if norm == 0.0 else vec / norm


def _patch_vector(fmap: FeatureMap) -> np.ndarray:
    if fmap.height != 1 or fmap.width != 1:
        raise DataValidationError(
            "class-token pooling expects H=W=1 tensors, got "
            f"{fmap.height}x{fmap.width}"
        )
    return pool_cls(fmap.data[:, 0, 0]).values


def scale_sums(fmap: FeatureMap, spec: AggregationSpec) -> dict[int, np.ndarray]:
    """Per-scale sums of region vectors, before any alpha weighting.

    These are alpha-independent, so alpha sweeps reuse them. Exposed for
    fixture validation via the aggregate debug output.
    """
    h, w = fmap.height, fmap.width
    for n in spec.scales:
        if n > min(h, w):
            raise DataValidationError(
                f"scale {n} exceeds spatial dims {h}x{w}"
            )
    if spec.pooling.kind is PoolingKind.CLS:
        vec = _patch_vector(fmap)
        sums = {}
        for n in spec.scales:
            region = _normalized(vec) if spec.region_norm else vec
            sums[n] = region.copy()
        return sums
    sums = {}
    for n in spec.scales:
        rows = grid_boundaries(h, n)
        cols = grid_boundaries(w, n)
        total = np.zeros(fmap.channels, dtype=np.float64)
        for i in range(n):
            for j in range(n):
                region = (rows[i], cols[j], rows[i + 1] - rows[i], cols[j + 1] - cols[j])
                pooled = pool_region(fmap, region, spec.pooling).values
                total += _normalized(pooled) if spec.region_norm else pooled
        sums[n] = total
    return sums


def _combine(sums: dict[int, np.ndarray], scales: Sequence[int], alpha: float) -> np.ndarray:
    total = np.zeros_like(next(iter(sums.values())))
    for n in scales:
        total += float(n) ** -alpha * sums[n]
    return total


def aggregate(
    fmap: FeatureMap, spec: AggregationSpec, debug: bool = False
) -> Descriptor | tuple[Descriptor, dict[int, np.ndarray]]:
    """Build the unit-norm aggregated descriptor for one feature map.

    With ``debug=True`` also returns the per-scale region-vector sums that
    feed the weighted combination.
    """
    sums = scale_sums(fmap, spec)
    total = _combine(sums, spec.scales, spec.alpha)
    norm = float(np.linalg.norm(total))
    if norm == 0.0:
        raise NumericalError(
            f"all-zero aggregate for '{fmap.image_id}', cannot normalize"
        )
    descriptor = Descriptor(
        values=total / norm,
        image_id=fmap.image_id,
        domain=fmap.domain,
        location_id=fmap.location_id,
    )
    if debug:
        return descriptor, sums
    return descriptor


def sweep_alpha(
    fmaps: Iterable[FeatureMap], spec: AggregationSpec, alphas: Sequence[float]
) -> dict[float, list[Descriptor]]:
    """Descriptor sets for several decay factors, pooling each region once.

    Region vectors do not depend on alpha, so the per-scale sums are shared
    across all requested alphas.
    """
    if not alphas:
        raise DataValidationError("alphas must be non-empty")
    for a in alphas:
        if not np.isfinite(a) or a < 0:
            raise DataValidationError(f"alpha must be finite and >= 0, got {a}")
    out: dict[float, list[Descriptor]] = {float(a): [] for a in alphas}
    for fmap in fmaps:
        sums = scale_sums(fmap, spec)
        for a in alphas:
            total = _combine(sums, spec.scales, float(a))
            norm = float(np.linalg.norm(total))
            if norm == 0.0:
                raise NumericalError(
                    f"all-zero aggregate for '{fmap.image_id}' at alpha={a}"
                )
            out[float(a)].append(
                Descriptor(
                    values=total / norm,
                    image_id=fmap.image_id,
                    domain=fmap.domain,
                    location_id=fmap.location_id,
                )
            )
    return out
