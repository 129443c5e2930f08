"""Synthetic cross-view benchmark with exact ground truth.

Each location is a random unit latent vector. Each domain applies a fixed
random orthogonal map plus a fixed offset to the embedded latent, and every
view adds isotropic Gaussian noise before unit-normalization:

    descriptor = normalize(Q_dom @ embed(latent) + b_dom + sigma * g)

The domain distortion is exactly the model class an orthogonal alignment
can invert, so at sigma = 0 recovering the planted rotation (and perfect
retrieval) is a theorem, not an empirical hope. Noise vectors are drawn
independently of sigma and scaled, so retrieval quality degrades
continuously as sigma grows on a fixed seed.

Randomness is split with counter-style seed sequences keyed by
(stream, domain, location, view), so any subset regenerates identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .descriptors import Descriptor, DescriptorSet, save_descriptor_set
from .errors import DataValidationError
from .evaluation import GroundTruth, ground_truth_from_sets
from .feature_store import (
    DatasetManifest,
    Domain,
    FeatureMap,
    ManifestEntry,
    save_manifest,
    write_feature_map,
)

_STREAM_LATENT = 0
_STREAM_DOMAIN_MAP = 1
_STREAM_OFFSET = 2
_STREAM_NOISE = 3
_STREAM_JITTER = 4

_DOMAINS = (Domain.DRONE, Domain.SATELLITE)


@dataclass(frozen=True)
class SynthSpec:
    num_locations: int = 100
    views_per_location_drone: int = 4
    latent_dim: int = 16
    ambient_dim: int = 64
    domain_rotation_angle_scale: float = 1.0
    domain_offset_norm: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    # Harder mode: an extra small random rotation per (domain, location).
    location_jitter_angle: float = 0.0
    # Force both domains onto the same orthogonal map (same sub-seed).
    shared_domain_map: bool = False

    def __post_init__(self) -> None:
        if self.num_locations < 1 or self.views_per_location_drone < 1:
            raise DataValidationError("location and view counts must be >= 1")
        if self.latent_dim < 1 or self.ambient_dim < 1:
            raise DataValidationError("dimensions must be >= 1")
        if self.latent_dim > self.ambient_dim:
            raise DataValidationError(
                f"latent_dim {self.latent_dim} exceeds ambient_dim {self.ambient_dim}"
            )
        if self.noise_sigma < 0:
            raise DataValidationError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if self.domain_offset_norm < 0 or self.domain_rotation_angle_scale < 0:
            raise DataValidationError("offset norm and angle scale must be >= 0")


def _rng(spec: SynthSpec, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=spec.seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def _random_rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal map exp(angle * A) for a random antisymmetric A of unit spectral norm.

    ``angle`` is the largest principal rotation angle in radians; 0 gives
    the identity.
    """
    if angle == 0.0 or dim == 1:
        return np.eye(dim)
    g = rng.standard_normal((dim, dim))
    a = (g - g.T) / 2.0
    spectral = np.linalg.norm(a, 2)
    if spectral == 0.0:
        return np.eye(dim)
    return expm(a * (angle / spectral))


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DataValidationError("degenerate zero vector in synthetic generator")
    return vec / norm


def location_label(index: int) -> str:
    return f"loc{index:05d}"


def generate(spec: SynthSpec) -> tuple[DescriptorSet, DescriptorSet, GroundTruth]:
    """Build drone and satellite descriptor sets plus drone->satellite ground truth."""
    dim = spec.ambient_dim
    latents = np.zeros((spec.num_locations, dim))
    for loc in range(spec.num_locations):
        z = _rng(spec, _STREAM_LATENT, loc).standard_normal(spec.latent_dim)
        latents[loc, : spec.latent_dim] = _unit(z)

    maps = []
    offsets = []
    for t, _ in enumerate(_DOMAINS):
        map_key = 0 if spec.shared_domain_map else t
        maps.append(
            _random_rotation(
                dim,
                spec.domain_rotation_angle_scale,
                _rng(spec, _STREAM_DOMAIN_MAP, map_key),
            )
        )
        if spec.domain_offset_norm > 0.0:
            direction = _unit(_rng(spec, _STREAM_OFFSET, t).standard_normal(dim))
            offsets.append(direction * spec.domain_offset_norm)
        else:
            offsets.append(np.zeros(dim))

    views = (spec.views_per_location_drone, 1)
    sets = []
    for t, domain in enumerate(_DOMAINS):
        entries = []
        for loc in range(spec.num_locations):
            base = latents[loc]
            if spec.location_jitter_angle > 0.0:
                jitter = _random_rotation(
                    dim, spec.location_jitter_angle, _rng(spec, _STREAM_JITTER, t, loc)
                )
                base = jitter @ base
            clean = maps[t] @ base + offsets[t]
            for view in range(views[t]):
                noise = _rng(spec, _STREAM_NOISE, t, loc, view).standard_normal(dim)
                vec = _unit(clean + spec.noise_sigma * noise)
                suffix = f"drone_v{view:02d}" if domain is Domain.DRONE else "sat"
                entries.append(
                    Descriptor(
                        values=vec,
                        image_id=f"{location_label(loc)}_{suffix}",
                        domain=domain,
                        location_id=location_label(loc),
                    )
                )
        sets.append(
            DescriptorSet(entries=entries, dataset_name=f"synth-{spec.seed}")
        )
    drone_set, sat_set = sets
    return drone_set, sat_set, ground_truth_from_sets(drone_set, sat_set)


def emit(spec: SynthSpec, out_dir: str | Path, meta: dict | None = None) -> dict[str, Path]:
    """Write the benchmark as standard pipeline inputs.

    Produces ``drone.jsonl`` and ``satellite.jsonl`` descriptor sets plus a
    ``manifest.json`` whose entries point at 1x1 tensor files holding the
    same vectors, so every downstream command runs unmodified.
    """
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)
    drone_set, sat_set, _ = generate(spec)
    manifest_entries = []
    for dset in (drone_set, sat_set):
        for entry in dset:
            tensor_path = tensor_dir / f"{entry.image_id}.cvfm"
            fmap = FeatureMap(
                data=entry.values.astype(np.float32).reshape(-1, 1, 1),
                image_id=entry.image_id,
                domain=entry.domain,
                location_id=entry.location_id,
            )
            write_feature_map(fmap, tensor_path)
            manifest_entries.append(
                ManifestEntry(
                    image_id=entry.image_id,
                    domain=entry.domain,
                    location_id=entry.location_id,
                    tensor_path=tensor_path,
                )
            )
    manifest = DatasetManifest(
        dataset_name=f"synth-{spec.seed}", entries=manifest_entries
    )
    paths = {
        "manifest": out_dir / "manifest.json",
        "drone": out_dir / "drone.jsonl",
        "satellite": out_dir / "satellite.jsonl",
    }
    save_manifest(manifest, paths["manifest"])
    set_meta = dict(meta or {})
    set_meta["dataset_name"] = manifest.dataset_name
    save_descriptor_set(drone_set, paths["drone"], meta=set_meta)
    save_descriptor_set(sat_set, paths["satellite"], meta=set_meta)
    return paths
