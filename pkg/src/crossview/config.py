"""Declarative pipeline configuration (TOML).

Every field has a default, so an empty file is valid; unknown keys are
rejected so typos fail loudly. The effective config is snapshotted into
every output file for provenance.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .aggregation import AggregationSpec
from .alignment import PairingStrategy
from .errors import DataValidationError
from .pooling import PoolingKind, PoolingSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_POOLING_KEYS = {"kind", "p", "clamp_negative"}
_AGGREGATION_KEYS = {"scales", "alpha", "region_norm"}
_ALIGNMENT_KEYS = {"dim", "variance_threshold", "pairing", "strict_rotation"}
_RETRIEVAL_KEYS = {"ks"}
_SECTIONS = {"pooling", "aggregation", "alignment", "retrieval", "paths"}


@dataclass(frozen=True)
class PipelineConfig:
    aggregation: AggregationSpec = field(default_factory=AggregationSpec)
    align_dim: int | None = None
    align_variance_threshold: float | None = None
    pairing: PairingStrategy = PairingStrategy.GIVEN_PAIRS
    strict_rotation: bool = False
    retrieval_ks: tuple[int, ...] = (1, 5, 10)
    paths: dict[str, str] = field(default_factory=dict)

    @property
    def pooling(self) -> PoolingSpec:
        return self.aggregation.pooling

    def to_dict(self) -> dict:
        """Snapshot embedded into output files."""
        return {
            "pooling": {
                "kind": self.pooling.kind.value,
                "p": self.pooling.p,
                "clamp_negative": self.pooling.clamp_negative,
            },
            "aggregation": {
                "scales": list(self.aggregation.scales),
                "alpha": self.aggregation.alpha,
                "region_norm": self.aggregation.region_norm,
            },
            "alignment": {
                "dim": self.align_dim,
                "variance_threshold": self.align_variance_threshold,
                "pairing": self.pairing.value,
                "strict_rotation": self.strict_rotation,
            },
            "retrieval": {"ks": list(self.retrieval_ks)},
        }


def _reject_unknown(section: str, table: dict, allowed: set[str]) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise DataValidationError(
            f"unknown config key(s) in [{section}]: {sorted(unknown)}"
        )


def config_from_dict(doc: dict) -> PipelineConfig:
    _reject_unknown("<root>", doc, _SECTIONS)
    pooling_tbl = doc.get("pooling", {})
    _reject_unknown("pooling", pooling_tbl, _POOLING_KEYS)
    try:
        kind = PoolingKind(pooling_tbl.get("kind", "gem"))
    except ValueError:
        raise DataValidationError(
            f"unknown pooling kind '{pooling_tbl.get('kind')}'"
        ) from None
    pooling = PoolingSpec(
        kind=kind,
        p=float(pooling_tbl.get("p", 3.0)),
        clamp_negative=bool(pooling_tbl.get("clamp_negative", True)),
    )

    agg_tbl = doc.get("aggregation", {})
    _reject_unknown("aggregation", agg_tbl, _AGGREGATION_KEYS)
    aggregation = AggregationSpec(
        pooling=pooling,
        scales=tuple(int(n) for n in agg_tbl.get("scales", (1, 2, 3))),
        alpha=float(agg_tbl.get("alpha", 6.0)),
        region_norm=bool(agg_tbl.get("region_norm", True)),
    )

    align_tbl = doc.get("alignment", {})
    _reject_unknown("alignment", align_tbl, _ALIGNMENT_KEYS)
    try:
        pairing = PairingStrategy(align_tbl.get("pairing", "given"))
    except ValueError:
        raise DataValidationError(
            f"unknown pairing strategy '{align_tbl.get('pairing')}'"
        ) from None
    dim = align_tbl.get("dim")
    variance = align_tbl.get("variance_threshold")

    retr_tbl = doc.get("retrieval", {})
    _reject_unknown("retrieval", retr_tbl, _RETRIEVAL_KEYS)
    ks = tuple(int(k) for k in retr_tbl.get("ks", (1, 5, 10)))
    if any(k < 1 for k in ks):
        raise DataValidationError(f"retrieval ks must be >= 1, got {ks}")

    paths_tbl = doc.get("paths", {})
    if not all(isinstance(v, str) for v in paths_tbl.values()):
        raise DataValidationError("[paths] values must be strings")

    return PipelineConfig(
        aggregation=aggregation,
        align_dim=int(dim) if dim is not None else None,
        align_variance_threshold=float(variance) if variance is not None else None,
        pairing=pairing,
        strict_rotation=bool(align_tbl.get("strict_rotation", False)),
        retrieval_ks=ks,
        paths=dict(paths_tbl),
    )


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        doc = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise DataValidationError(f"{path}: invalid TOML ({exc})") from exc
    return config_from_dict(doc)
