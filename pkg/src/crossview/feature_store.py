"""On-disk format for patch-feature tensors and manifest-driven dataset loading.

A tensor file carries only geometry and payload; image identity, viewpoint
domain, and the ground-truth location label live in the dataset manifest so
one tensor can be reused across splits.

Binary layout (little-endian)::

    bytes  0-3   magic "CVFM"
    bytes  4-5   version  u16 = 1
    bytes  6-7   dtype    u16 = 0 (float32)
    bytes  8-11  C        u32
    bytes 12-15  H        u32
    bytes 16-19  W        u32
    bytes 20-27  reserved, must be zero
    then C*H*W float32 values, element (k, i, j) at index k*H*W + i*W + j
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataValidationError
from .ioutil import atomic_write_bytes, atomic_write_text

MAGIC = b"CVFM"
VERSION = 1
DTYPE_F32 = 0
HEADER_SIZE = 28
# Rejects absurd headers before any allocation is attempted.
MAX_ELEMENTS = 2**28

_HEADER = struct.Struct("<4sHHIII8s")


class Domain(str, Enum):
    DRONE = "drone"
    SATELLITE = "satellite"


@dataclass(frozen=True)
class FeatureMap:
    """A C x H x W patch-feature tensor with identity metadata.

    ``data`` is float32, shape (C, H, W). Metadata comes from the manifest,
    never from the tensor file itself.
    """

    data: np.ndarray
    image_id: str = ""
    domain: Domain = Domain.DRONE
    location_id: str = ""

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise DataValidationError(
                f"feature map must be 3-dimensional (C, H, W), got shape {arr.shape}"
            )
        if min(arr.shape) < 1:
            raise DataValidationError(f"feature map dims must be >= 1, got {arr.shape}")
        if arr.size > MAX_ELEMENTS:
            raise DataValidationError(
                f"feature map has {arr.size} elements, cap is {MAX_ELEMENTS}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataValidationError("non-finite value in feature map data")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def write_feature_map(fmap: FeatureMap, path: str | Path) -> None:
    """Write ``fmap`` to ``path`` in the binary tensor format.

    The FeatureMap constructor has already validated the invariants, so a
    written file always round-trips bit-exactly through read_feature_map.
    """
    c, h, w = fmap.data.shape
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, c, h, w, b"\x00" * 8)
    payload = fmap.data.astype("<f4", copy=False).tobytes()
    atomic_write_bytes(path, header + payload)


def read_feature_map(
    path: str | Path,
    image_id: str = "",
    domain: Domain = Domain.DRONE,
    location_id: str = "",
) -> FeatureMap:
    """Read a tensor file, validating the header strictly.

    Metadata is not stored in the file; callers (normally the manifest
    loader) supply it through the keyword arguments.
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise DataValidationError(f"{path}: file shorter than header ({len(raw)} bytes)")
    magic, version, dtype, c, h, w, reserved = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataValidationError(f"{path}: unrecognized format (bad magic {magic!r})")
    if version != VERSION:
        raise DataValidationError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise DataValidationError(f"{path}: unsupported dtype code {dtype}")
    if min(c, h, w) < 1:
        raise DataValidationError(f"{path}: dims must be >= 1, got C={c} H={h} W={w}")
    n_elements = c * h * w
    if n_elements > MAX_ELEMENTS:
        raise DataValidationError(
            f"{path}: dimension overflow, C*H*W = {n_elements} exceeds {MAX_ELEMENTS}"
        )
    if reserved != b"\x00" * 8:
        raise DataValidationError(f"{path}: reserved header bytes not zero")
    expected = HEADER_SIZE + 4 * n_elements
    if len(raw) < expected:
        raise DataValidationError(
            f"{path}: truncated tensor, expected {expected} bytes, got {len(raw)}"
        )
    if len(raw) > expected:
        raise DataValidationError(
            f"{path}: trailing bytes after payload ({len(raw) - expected})"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise DataValidationError(f"{path}: non-finite value in payload")
    return FeatureMap(data=data.copy(), image_id=image_id, domain=domain,
                      location_id=location_id)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    domain: Domain
    location_id: str
    tensor_path: Path


@dataclass
class DatasetManifest:
    """Validated dataset index; tensors are loaded lazily on demand."""

    dataset_name: str
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.image_id in seen:
                raise DataValidationError(f"duplicate image_id '{entry.image_id}'")
            seen.add(entry.image_id)

    def by_domain(self, domain: Domain) -> list[ManifestEntry]:
        return [e for e in self.entries if e.domain == domain]

    def load_map(self, entry: ManifestEntry) -> FeatureMap:
        return read_feature_map(
            entry.tensor_path,
            image_id=entry.image_id,
            domain=entry.domain,
            location_id=entry.location_id,
        )

    def iter_maps(self, domain: Domain | None = None):
        for entry in self.entries:
            if domain is None or entry.domain == domain:
                yield self.load_map(entry)


def load_dataset(manifest_path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest JSON file.

    Tensor paths are resolved relative to the manifest's directory and must
    exist; image ids must be unique; domain strings must be known.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise DataValidationError(f"{manifest_path}: manifest must be an object with 'entries'")
    base = manifest_path.parent
    entries: list[ManifestEntry] = []
    for i, row in enumerate(doc["entries"]):
        missing = {"image_id", "domain", "location_id", "tensor_path"} - set(row)
        if missing:
            raise DataValidationError(
                f"{manifest_path}: entry {i} missing keys {sorted(missing)}"
            )
        try:
            domain = Domain(row["domain"])
        except ValueError:
            raise DataValidationError(
                f"{manifest_path}: entry {i} has unknown domain '{row['domain']}'"
            ) from None
        tensor_path = base / row["tensor_path"]
        if not tensor_path.is_file():
            raise DataValidationError(f"missing tensor file '{tensor_path}'")
        entries.append(
            ManifestEntry(
                image_id=str(row["image_id"]),
                domain=domain,
                location_id=str(row["location_id"]),
                tensor_path=tensor_path,
            )
        )
    return DatasetManifest(dataset_name=str(doc.get("dataset_name", "")), entries=entries)


def save_manifest(
    manifest: DatasetManifest, path: str | Path, meta: dict | None = None
) -> None:
    """Write a manifest JSON with tensor paths relative to ``path``'s directory."""
    path = Path(path)
    base = path.parent
    doc = {
        "dataset_name": manifest.dataset_name,
        "entries": [
            {
                "image_id": e.image_id,
                "domain": e.domain.value,
                "location_id": e.location_id,
                "tensor_path": os.path.relpath(
                    Path(e.tensor_path).resolve(), base.resolve()
                ),
            }
            for e in manifest.entries
        ],
    }
    if meta is not None:
        doc["_meta"] = meta
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
