"""Retrieval metrics: Recall@K, Recall@top1%, and mean Average Precision.

All metrics are rank-based percentages in [0, 100]. A query counts toward
Recall@K when any relevant gallery item appears in its top K. Recall@top1%
is Recall@K at K = ceil(gallery_size / 100), so tiny galleries still use a
threshold of at least 1. Per-query AP uses the interpolation-free formula

    AP = (1/|rel|) * sum_i  i / r_i

over the ascending ranks r_1 < r_2 < ... of the relevant items, which for
single-relevant queries reduces to 1/rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .descriptors import DescriptorSet
from .errors import DataValidationError
from .retrieval import RankedResult


@dataclass(frozen=True)
class GroundTruth:
    """query_id -> set of relevant gallery ids (same location across domains)."""

    relevant: Mapping[str, frozenset[str]]

    def __post_init__(self) -> None:
        for query_id, rel in self.relevant.items():
            if not rel:
                raise DataValidationError(
                    f"query '{query_id}' has an empty relevant set"
                )

    def for_query(self, query_id: str) -> frozenset[str]:
        try:
            return self.relevant[query_id]
        except KeyError:
            raise DataValidationError(f"unknown query_id '{query_id}'") from None


def ground_truth_from_sets(queries: DescriptorSet, gallery: DescriptorSet) -> GroundTruth:
    """Relevance by equal location_id between a query set and a gallery set."""
    by_loc: dict[str, set[str]] = {}
    for entry in gallery:
        by_loc.setdefault(entry.location_id, set()).add(entry.image_id)
    relevant = {}
    for entry in queries:
        rel = by_loc.get(entry.location_id)
        if not rel:
            raise DataValidationError(
                f"query '{entry.image_id}' has no relevant gallery item "
                f"(location '{entry.location_id}')"
            )
        relevant[entry.image_id] = frozenset(rel)
    return GroundTruth(relevant=relevant)


def _require_results(results: Sequence[RankedResult]) -> None:
    if not results:
        raise DataValidationError("no ranked results to evaluate")


def recall_at_k(results: Sequence[RankedResult], gt: GroundTruth, k: int) -> float:
    """Percentage of queries with a relevant item in the top k."""
    if k < 1:
        raise DataValidationError(f"k must be >= 1, got {k}")
    _require_results(results)
    found = 0
    for r in results:
        rel = gt.for_query(r.query_id)
        if any(h.gallery_id in rel for h in r.hits[:k]):
            found += 1
    return 100.0 * found / len(results)


def recall_top1pct(
    results: Sequence[RankedResult], gt: GroundTruth, gallery_size: int
) -> float:
    """Recall@K with K = ceil(gallery_size / 100)."""
    if gallery_size < 1:
        raise DataValidationError(f"gallery_size must be >= 1, got {gallery_size}")
    return recall_at_k(results, gt, math.ceil(gallery_size / 100))


def average_precision(results: Sequence[RankedResult], gt: GroundTruth) -> float:
    """Mean per-query AP, as a percentage.

    Requires each ranking to contain every relevant item; truncated
    rankings would silently understate the metric, so they are rejected.
    """
    _require_results(results)
    total = 0.0
    for r in results:
        rel = gt.for_query(r.query_id)
        ranks = [i + 1 for i, h in enumerate(r.hits) if h.gallery_id in rel]
        if len(ranks) != len(rel):
            raise DataValidationError(
                f"ranking for query '{r.query_id}' covers {len(ranks)} of "
                f"{len(rel)} relevant items; full rankings are required"
            )
        total += sum((i + 1) / rank for i, rank in enumerate(ranks)) / len(rel)
    return 100.0 * total / len(results)


@dataclass(frozen=True)
class EvalReport:
    recall_at: dict[int, float]
    recall_top1pct: float
    ap_mean: float
    num_queries: int
    gallery_size: int
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        ks = sorted(self.recall_at)
        values = [self.recall_at[k] for k in ks]
        if any(b < a for a, b in zip(values, values[1:])):
            raise DataValidationError("recall must be non-decreasing in K")
        for v in values + [self.recall_top1pct, self.ap_mean]:
            if not 0.0 <= v <= 100.0:
                raise DataValidationError(f"metric value {v} outside [0, 100]")

    def to_json_dict(self) -> dict:
        recall = {str(k): self.recall_at[k] for k in sorted(self.recall_at)}
        recall["top1pct"] = self.recall_top1pct
        return {
            "recall": recall,
            "ap": self.ap_mean,
            "n_queries": self.num_queries,
            "gallery_size": self.gallery_size,
            "config": self.config,
        }


def evaluate(
    results: Sequence[RankedResult],
    gt: GroundTruth,
    ks: Sequence[int],
    gallery_size: int,
    config: dict | None = None,
) -> EvalReport:
    """Assemble all metrics over full rankings."""
    if not ks:
        raise DataValidationError("Ks must be non-empty")
    _require_results(results)
    for r in results:
        if len(r.hits) != gallery_size:
            raise DataValidationError(
                f"query '{r.query_id}' has {len(r.hits)} hits, expected the "
                f"full gallery of {gallery_size}"
            )
    return EvalReport(
        recall_at={int(k): recall_at_k(results, gt, int(k)) for k in ks},
        recall_top1pct=recall_top1pct(results, gt, gallery_size),
        ap_mean=average_precision(results, gt),
        num_queries=len(results),
        gallery_size=gallery_size,
        config=config or {},
    )


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Aligned-column text table (first column left-aligned, rest right)."""
    widths = [len(h) for h in header]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = []
    for row in [list(header)] + [list(r) for r in rows]:
        cells = [row[0].ljust(widths[0])] + [
            c.rjust(w) for c, w in zip(row[1:], widths[1:])
        ]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def report_table(label: str, report: EvalReport) -> str:
    """One-row metrics table mirroring the benchmark layout."""
    ks = sorted(report.recall_at)
    header = [""] + [f"R@{k}" for k in ks] + ["R@top1", "AP"]
    row = (
        [label]
        + [f"{report.recall_at[k]:.2f}" for k in ks]
        + [f"{report.recall_top1pct:.2f}", f"{report.ap_mean:.2f}"]
    )
    return format_table(header, [row])
