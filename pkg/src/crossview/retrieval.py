"""Exact cosine top-K retrieval and patch-level similarity heatmaps.

Search is brute force on purpose: cross-view galleries are small enough
(10^3..10^4) that exactness costs little and keeps metrics trustworthy.
Ties are broken by ascending gallery id so rankings are deterministic
across runs and platforms.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignment import AlignmentModel, apply_alignment
from .descriptors import Descriptor
from .errors import DataValidationError
from .feature_store import Domain, FeatureMap
from .ioutil import atomic_write_bytes, atomic_write_text


@dataclass(frozen=True)
class Hit:
    gallery_id: str
    score: float


@dataclass(frozen=True)
class RankedResult:
    query_id: str
    hits: tuple[Hit, ...]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def search(
    query_ids: Sequence[str],
    query_vectors: np.ndarray,
    gallery_ids: Sequence[str],
    gallery_vectors: np.ndarray,
    k: int,
    threads: int = 1,
) -> list[RankedResult]:
    """Rank every gallery item against each query by cosine similarity.

    Returns min(k, gallery size) hits per query, scores non-increasing,
    ties by ascending gallery_id.
    """
    if k < 1:
        raise DataValidationError(f"k must be >= 1, got {k}")
    if len(gallery_ids) == 0:
        raise DataValidationError("empty gallery")
    q = np.atleast_2d(np.asarray(query_vectors, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gallery_vectors, dtype=np.float64))
    if q.shape[0] != len(query_ids) or g.shape[0] != len(gallery_ids):
        raise DataValidationError("id list and vector matrix row counts differ")
    if q.shape[1] != g.shape[1]:
        raise DataValidationError(
            f"dimension mismatch: queries {q.shape[1]}, gallery {g.shape[1]}"
        )
    qn = _unit_rows(q)
    gn = _unit_rows(g)
    gallery_id_arr = np.asarray(gallery_ids)
    k = min(k, len(gallery_ids))

    def rank_block(rows: np.ndarray) -> list[RankedResult]:
        scores = qn[rows] @ gn.T
        out = []
        for r, qi in enumerate(rows):
            row = scores[r]
            # lexsort: last key is primary, so order by descending score
            # first, then ascending gallery id.
            order = np.lexsort((gallery_id_arr, -row))[:k]
            hits = tuple(
                Hit(gallery_id=str(gallery_id_arr[j]), score=float(row[j]))
                for j in order
            )
            out.append(RankedResult(query_id=str(query_ids[qi]), hits=hits))
        return out

    all_rows = np.arange(q.shape[0])
    if threads <= 1 or q.shape[0] < 2 * threads:
        return rank_block(all_rows)
    blocks = np.array_split(all_rows, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # Submission order = concatenation order, so results stay deterministic.
        parts = list(pool.map(rank_block, blocks))
    return [r for part in parts for r in part]


def save_results(results: Sequence[RankedResult], path: str | Path,
                 meta: dict | None = None) -> None:
    lines = []
    if meta is not None:
        lines.append(json.dumps({"_meta": meta}, sort_keys=True))
    for r in results:
        lines.append(
            json.dumps(
                {
                    "query_id": r.query_id,
                    "hits": [{"id": h.gallery_id, "score": h.score} for h in r.hits],
                },
                sort_keys=True,
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_results(path: str | Path) -> list[RankedResult]:
    out: list[RankedResult] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        row = json.loads(line)
        if "_meta" in row:
            continue
        if "query_id" not in row or "hits" not in row:
            raise DataValidationError(f"{path}:{lineno}: missing query_id or hits")
        out.append(
            RankedResult(
                query_id=str(row["query_id"]),
                hits=tuple(Hit(str(h["id"]), float(h["score"])) for h in row["hits"]),
            )
        )
    return out


@dataclass(frozen=True)
class Heatmap:
    """Min-max normalized per-patch similarity grid, optionally upsampled."""

    query_id: str
    gallery_id: str
    values: np.ndarray
    upsampled: np.ndarray | None = None


def similarity_heatmap(
    drone_map: FeatureMap,
    sat_descriptor: Descriptor,
    model: AlignmentModel,
    upsample_to: tuple[int, int] | None = None,
) -> Heatmap:
    """Cosine response of each aligned drone patch to the aligned satellite descriptor.

    Every patch vector is centered with the drone mean, projected, and
    rotated; the satellite descriptor is centered and projected. The H x W
    cosine grid is min-max normalized to [0, 1] (a constant grid becomes
    all 0.5 with a warning), then optionally bilinearly enlarged.
    """
    c, h, w = drone_map.data.shape
    if c != model.ambient_dim:
        raise DataValidationError(
            f"patch dim {c} does not match model dim {model.ambient_dim}"
        )
    if sat_descriptor.dim != model.ambient_dim:
        raise DataValidationError(
            f"satellite descriptor dim {sat_descriptor.dim} does not match model"
        )
    patches = drone_map.data.reshape(c, h * w).T.astype(np.float64)
    aligned_patches = apply_alignment(model, patches, Domain.DRONE)
    aligned_sat = apply_alignment(model, sat_descriptor.values, Domain.SATELLITE)
    sat_norm = float(np.linalg.norm(aligned_sat))
    if sat_norm == 0.0:
        raise DataValidationError("aligned satellite descriptor is zero")
    cosines = (_unit_rows(aligned_patches) @ (aligned_sat / sat_norm)).reshape(h, w)
    lo, hi = float(cosines.min()), float(cosines.max())
    if hi - lo == 0.0:
        warnings.warn(
            f"constant similarity map for query '{drone_map.image_id}'",
            stacklevel=2,
        )
        values = np.full((h, w), 0.5)
    else:
        values = (cosines - lo) / (hi - lo)
    upsampled = None
    if upsample_to is not None:
        upsampled = bilinear_upsample(values, upsample_to[0], upsample_to[1])
    return Heatmap(
        query_id=drone_map.image_id,
        gallery_id=sat_descriptor.image_id,
        values=values,
        upsampled=upsampled,
    )


def bilinear_upsample(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear enlargement with align-corners semantics.

    Corner input cells map exactly onto corner output pixels, so unique
    extrema keep their locations under enlargement.
    """
    if out_h < 1 or out_w < 1:
        raise DataValidationError(f"invalid upsample size {out_h}x{out_w}")
    h, w = values.shape
    rows = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    cols = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    if h == 1:
        rows = np.zeros(out_h)
    if w == 1:
        cols = np.zeros(out_w)
    r0 = np.clip(np.floor(rows).astype(int), 0, h - 1)
    c0 = np.clip(np.floor(cols).astype(int), 0, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = values[np.ix_(r0, c0)] * (1 - fc) + values[np.ix_(r0, c1)] * fc
    bottom = values[np.ix_(r1, c0)] * (1 - fc) + values[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def write_heatmap_pgm(heatmap: Heatmap, path: str | Path, comment: str = "") -> None:
    """16-bit binary PGM (P5, maxval 65535, big-endian samples)."""
    grid = heatmap.upsampled if heatmap.upsampled is not None else heatmap.values
    h, w = grid.shape
    header = "P5\n"
    if comment:
        header += "".join(f"# {line}\n" for line in comment.splitlines())
    header += f"{w} {h}\n65535\n"
    samples = np.round(np.clip(grid, 0.0, 1.0) * 65535.0).astype(">u2")
    atomic_write_bytes(path, header.encode("ascii") + samples.tobytes())


def write_heatmap_csv(heatmap: Heatmap, path: str | Path, comment: str = "") -> None:
    grid = heatmap.upsampled if heatmap.upsampled is not None else heatmap.values
    lines = [f"# {line}" for line in comment.splitlines()] if comment else []
    for row in grid:
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
