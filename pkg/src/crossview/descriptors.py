"""Aggregated descriptors and the JSON-lines descriptor-set file format.

A descriptor-set file holds one JSON object per image:

    {"image_id": ..., "domain": "drone"|"satellite", "location_id": ..., "values": [...]}

An optional first line ``{"_meta": {...}}`` carries the config snapshot and
input content hashes for provenance; readers skip it. Values are stored at
float32 precision and round-trip bit-exactly through decimal JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataValidationError
from .feature_store import Domain
from .ioutil import atomic_write_text

UNIT_NORM_TOL = 1e-6

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


@dataclass(frozen=True)
class Descriptor:
    """A fixed-dimension aggregated feature vector for one image."""

    values: np.ndarray
    image_id: str
    domain: Domain
    location_id: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise DataValidationError(f"descriptor must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataValidationError(f"non-finite value in descriptor '{self.image_id}'")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass
class DescriptorSet:
    """An ordered collection of descriptors from one dataset (or one domain)."""

    entries: list[Descriptor] = field(default_factory=list)
    dataset_name: str = ""

    def __post_init__(self) -> None:
        seen: set[str] = set()
        dim = None
        for d in self.entries:
            if d.image_id in seen:
                raise DataValidationError(f"duplicate image_id '{d.image_id}'")
            seen.add(d.image_id)
            if dim is None:
                dim = d.dim
            elif d.dim != dim:
                raise DataValidationError(
                    f"descriptor '{d.image_id}' has dim {d.dim}, expected {dim}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def dim(self) -> int:
        if not self.entries:
            raise DataValidationError("empty descriptor set has no dimension")
        return self.entries[0].dim

    def ids(self) -> list[str]:
        return [d.image_id for d in self.entries]

    def location_ids(self) -> list[str]:
        return [d.location_id for d in self.entries]

    def matrix(self) -> np.ndarray:
        """Stack entry values into an N x D float64 matrix (row order = entry order)."""
        if not self.entries:
            raise DataValidationError("empty descriptor set")
        return np.stack([d.values for d in self.entries])

    def by_domain(self, domain: Domain) -> "DescriptorSet":
        return DescriptorSet(
            entries=[d for d in self.entries if d.domain == domain],
            dataset_name=self.dataset_name,
        )


def fnv1a64(data: bytes, state: int = _FNV_OFFSET) -> int:
    """64-bit FNV-1a over ``data``, continuing from ``state``."""
    for byte in data:
        state = ((state ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return state


def descriptor_set_hash(sets: Iterable[DescriptorSet]) -> int:
    """Content hash of one or more descriptor sets.

    FNV-1a64 over entries sorted by image_id: each contributes its id bytes
    followed by its float32 little-endian value bytes. Identical regardless
    of entry order or in-memory precision beyond float32.
    """
    entries = sorted(
        (d for s in sets for d in s.entries), key=lambda d: d.image_id
    )
    state = _FNV_OFFSET
    for d in entries:
        state = fnv1a64(d.image_id.encode("utf-8"), state)
        state = fnv1a64(d.values.astype("<f4").tobytes(), state)
    return state


def save_descriptor_set(
    dset: DescriptorSet, path: str | Path, meta: dict | None = None
) -> None:
    """Write a descriptor set as JSON-lines, with an optional leading meta line."""
    lines = []
    if meta is not None:
        lines.append(json.dumps({"_meta": meta}, sort_keys=True))
    for d in dset.entries:
        values = [float(v) for v in d.values.astype(np.float32)]
        lines.append(
            json.dumps(
                {
                    "image_id": d.image_id,
                    "domain": d.domain.value,
                    "location_id": d.location_id,
                    "values": values,
                },
                sort_keys=True,
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_descriptor_set(path: str | Path) -> DescriptorSet:
    """Read a JSON-lines descriptor set, skipping any leading meta line."""
    path = Path(path)
    entries: list[Descriptor] = []
    dataset_name = ""
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if "_meta" in row:
            dataset_name = str(row["_meta"].get("dataset_name", ""))
            continue
        missing = {"image_id", "domain", "location_id", "values"} - set(row)
        if missing:
            raise DataValidationError(f"{path}:{lineno}: missing keys {sorted(missing)}")
        try:
            domain = Domain(row["domain"])
        except ValueError:
            raise DataValidationError(
                f"{path}:{lineno}: unknown domain '{row['domain']}'"
            ) from None
        values = np.asarray(row["values"], dtype=np.float32)
        entries.append(
            Descriptor(
                values=values,
                image_id=str(row["image_id"]),
                domain=domain,
                location_id=str(row["location_id"]),
            )
        )
    return DescriptorSet(entries=entries, dataset_name=dataset_name)
