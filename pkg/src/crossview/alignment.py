"""Statistical manifold alignment: per-domain PCA plus an orthogonal rotation.

Fitting runs in two stages. Each domain is independently mean-centered and
projected onto its top-d principal components (covariance with the 1/(N-1)
factor, symmetric eigendecomposition, eigenvalues clamped at zero). Paired
rows of the two projected matrices then feed the orthogonal Procrustes
problem

    min_R ||X_D R - X_S||_F^2   s.t.  R^T R = I

whose closed-form solution drops the singular values of the cross-domain
covariance: with U S V^T = svd(X_S^T X_D), R = V U^T. Only the drone side
is rotated; satellite descriptors are just centered and projected. Being
orthogonal, R preserves norms and inner products within the drone domain,
so alignment re-orients the manifold without distorting it.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .descriptors import DescriptorSet, descriptor_set_hash
from .errors import DataValidationError, NumericalError
from .feature_store import Domain
from .ioutil import atomic_write_bytes

MODEL_MAGIC = b"CVAM"
MODEL_VERSION = 1

# Relative singular-value gap below which the Procrustes optimum is non-unique.
DEGENERACY_RTOL = 1e-8

DEFAULT_MAX_DIM = 256


class PairingStrategy(str, Enum):
    GIVEN_PAIRS = "given"
    MUTUAL_NN = "mutual_nn"


@dataclass(frozen=True)
class DomainStats:
    """Mean, top-d principal directions, and their variances for one domain."""

    mean: np.ndarray
    projection: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        proj = np.asarray(self.projection, dtype=np.float64)
        ev = np.asarray(self.eigenvalues, dtype=np.float64)
        if mean.ndim != 1 or proj.ndim != 2 or proj.shape[0] != mean.shape[0]:
            raise DataValidationError(
                f"inconsistent stats shapes: mean {mean.shape}, projection {proj.shape}"
            )
        if ev.shape != (proj.shape[1],):
            raise DataValidationError(
                f"expected {proj.shape[1]} eigenvalues, got {ev.shape}"
            )
        if np.any(np.diff(ev) > 0):
            raise DataValidationError("eigenvalues must be non-increasing")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "eigenvalues", np.maximum(ev, 0.0))

    @property
    def ambient_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.projection.shape[1]


@dataclass(eq=False)
class AlignmentModel:
    """Per-domain statistics plus the fitted drone-to-satellite rotation."""

    drone_stats: DomainStats
    satellite_stats: DomainStats
    rotation: np.ndarray
    d: int
    pairing: PairingStrategy = PairingStrategy.GIVEN_PAIRS
    fitted_on: str = ""
    set_hash: int = 0
    degenerate: bool = False

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (self.d, self.d):
            raise DataValidationError(f"rotation must be {self.d}x{self.d}, got {r.shape}")
        if self.drone_stats.dim != self.d or self.satellite_stats.dim != self.d:
            raise DataValidationError("domain stats dim does not match model d")
        if self.drone_stats.ambient_dim != self.satellite_stats.ambient_dim:
            raise DataValidationError("domains have different ambient dimensions")
        self.rotation = r

    @property
    def ambient_dim(self) -> int:
        return self.drone_stats.ambient_dim

    def __eq__(self, other: object) -> bool:
        # Equality over the persisted content: matrices, d, and set hash.
        if not isinstance(other, AlignmentModel):
            return NotImplemented
        return (
            self.d == other.d
            and self.set_hash == other.set_hash
            and np.array_equal(self.drone_stats.mean, other.drone_stats.mean)
            and np.array_equal(self.drone_stats.projection, other.drone_stats.projection)
            and np.array_equal(self.satellite_stats.mean, other.satellite_stats.mean)
            and np.array_equal(
                self.satellite_stats.projection, other.satellite_stats.projection
            )
            and np.array_equal(self.rotation, other.rotation)
        )


def _eig_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean plus all eigenvectors/eigenvalues of the sample covariance, descending."""
    n = X.shape[0]
    mu = X.mean(axis=0)
    centered = X - mu
    cov = centered.T @ centered / (n - 1)
    try:
        evals, evecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return mu, evecs[:, ::-1], np.maximum(evals[::-1], 0.0)


def fit_pca(descriptors: np.ndarray, d: int) -> DomainStats:
    """Fit one domain's mean and top-d principal subspace.

    Requires N >= 2 and 1 <= d <= min(N-1, D); the covariance has rank at
    most N-1, so larger d would project onto noise directions of the solver.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise DataValidationError(f"expected an N x D matrix, got shape {X.shape}")
    n, dim = X.shape
    if n < 2:
        raise DataValidationError(f"PCA needs at least 2 samples, got {n}")
    if not 1 <= d <= min(n - 1, dim):
        raise DataValidationError(
            f"target dim {d} out of range [1, {min(n - 1, dim)}] for {n}x{dim} data"
        )
    mu, evecs, evals = _eig_stats(X)
    return DomainStats(mean=mu, projection=evecs[:, :d].copy(), eigenvalues=evals[:d].copy())


def project(stats: DomainStats, descriptors: np.ndarray) -> np.ndarray:
    """Center with the domain mean and project onto the principal subspace."""
    X = np.asarray(descriptors, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != stats.ambient_dim:
        raise DataValidationError(
            f"descriptor dim {X.shape[1]} does not match stats dim {stats.ambient_dim}"
        )
    out = (X - stats.mean) @ stats.projection
    return out[0] if single else out


@dataclass(frozen=True)
class ProcrustesResult:
    rotation: np.ndarray
    singular_values: np.ndarray
    degenerate: bool


def fit_procrustes(
    x_drone: np.ndarray, x_sat: np.ndarray, strict_rotation: bool = False
) -> ProcrustesResult:
    """Solve for the orthogonal matrix minimizing ||x_drone @ R - x_sat||_F.

    Rows of the two matrices must be in correspondence and already centered.
    Reflections are allowed by default (the constraint is R^T R = I only);
    ``strict_rotation`` forces det(R) = +1 by flipping the last singular
    pair. A rank-deficient or tied-spectrum cross-covariance still yields a
    valid orthogonal R but is flagged degenerate (non-unique optimum).
    """
    a = np.asarray(x_drone, dtype=np.float64)
    b = np.asarray(x_sat, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DataValidationError("paired matrices must be 2-D")
    if a.shape[0] != b.shape[0]:
        raise DataValidationError(
            f"row-count mismatch: {a.shape[0]} drone vs {b.shape[0]} satellite"
        )
    if a.shape[1] != b.shape[1]:
        raise DataValidationError(
            f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    if a.shape[0] < 1:
        raise DataValidationError("need at least one paired row")
    cross = b.T @ a
    try:
        u, sigma, vt = np.linalg.svd(cross)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD of cross-covariance failed: {exc}") from exc
    v = vt.T
    if strict_rotation and np.linalg.det(v @ u.T) < 0:
        v = v.copy()
        v[:, -1] = -v[:, -1]
    rotation = v @ u.T
    smax = sigma[0]
    degenerate = bool(
        smax == 0.0
        or sigma[-1] < DEGENERACY_RTOL * smax
        or (len(sigma) > 1 and np.min(-np.diff(sigma)) < DEGENERACY_RTOL * smax)
    )
    return ProcrustesResult(rotation=rotation, singular_values=sigma, degenerate=degenerate)


def procrustes_objective(rotation: np.ndarray, x_drone: np.ndarray, x_sat: np.ndarray) -> float:
    """Frobenius objective ||x_drone @ R - x_sat||_F^2."""
    diff = x_drone @ rotation - x_sat
    return float(np.sum(diff * diff))


def build_pairs(
    drone: DescriptorSet,
    satellite: DescriptorSet,
    strategy: PairingStrategy = PairingStrategy.GIVEN_PAIRS,
    drone_proj: np.ndarray | None = None,
    sat_proj: np.ndarray | None = None,
) -> list[tuple[int, int]]:
    """Row correspondences between the two domains for the Procrustes fit.

    GIVEN_PAIRS uses equal location_id: every drone view pairs with each
    satellite view of its location, so locations with many drone views are
    weighted by view count. MUTUAL_NN is label-free: it pairs mutual nearest
    neighbors under cosine similarity in the projected, centered space
    (``drone_proj`` / ``sat_proj``).
    """
    if len(drone) == 0 or len(satellite) == 0:
        raise DataValidationError("both descriptor sets must be non-empty")
    if strategy is PairingStrategy.GIVEN_PAIRS:
        sat_by_loc: dict[str, list[int]] = {}
        for j, entry in enumerate(satellite):
            sat_by_loc.setdefault(entry.location_id, []).append(j)
        pairs = [
            (i, j)
            for i, entry in enumerate(drone)
            for j in sat_by_loc.get(entry.location_id, [])
        ]
        if not pairs:
            raise DataValidationError("no shared location_ids between domains")
        return pairs
    if drone_proj is None or sat_proj is None:
        raise DataValidationError("mutual-NN pairing needs projected matrices")
    dn = _unit_rows(np.asarray(drone_proj, dtype=np.float64))
    sn = _unit_rows(np.asarray(sat_proj, dtype=np.float64))
    scores = dn @ sn.T
    nn_of_drone = np.argmax(scores, axis=1)
    nn_of_sat = np.argmax(scores, axis=0)
    return [
        (i, int(j)) for i, j in enumerate(nn_of_drone) if nn_of_sat[j] == i
    ]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def choose_dim(
    n_drone: int, n_sat: int, ambient_dim: int, requested: int | None = None
) -> int:
    """Default target dimension: min(256, N-1 per domain, D)."""
    cap = min(n_drone - 1, n_sat - 1, ambient_dim)
    if requested is not None:
        if not 1 <= requested <= cap:
            raise DataValidationError(
                f"target dim {requested} out of range [1, {cap}]"
            )
        return requested
    return min(DEFAULT_MAX_DIM, cap)


def _variance_dim(evals: np.ndarray, threshold: float) -> int:
    total = float(evals.sum())
    if total <= 0.0:
        return 1
    mass = np.cumsum(evals) / total
    return int(np.searchsorted(mass, threshold) + 1)


def fit_alignment(
    drone: DescriptorSet,
    satellite: DescriptorSet,
    d: int | None = None,
    pairing: PairingStrategy = PairingStrategy.GIVEN_PAIRS,
    variance_threshold: float | None = None,
    strict_rotation: bool = False,
) -> AlignmentModel:
    """Fit the full dual-stage model: per-domain PCA, pairing, then rotation.

    ``variance_threshold`` (e.g. 0.95) selects d as the smallest dimension
    retaining that cumulative eigenvalue mass in both domains; the explicit
    ``d`` wins when given. Both domains always share one d.
    """
    xd = drone.matrix()
    xs = satellite.matrix()
    if xd.shape[0] < 2 or xs.shape[0] < 2:
        raise DataValidationError("each domain needs at least 2 descriptors")
    if xd.shape[1] != xs.shape[1]:
        raise DataValidationError(
            f"domains have different descriptor dims: {xd.shape[1]} vs {xs.shape[1]}"
        )
    mu_d, evecs_d, evals_d = _eig_stats(xd)
    mu_s, evecs_s, evals_s = _eig_stats(xs)
    cap = min(xd.shape[0] - 1, xs.shape[0] - 1, xd.shape[1])
    if d is None and variance_threshold is not None:
        if not 0.0 < variance_threshold <= 1.0:
            raise DataValidationError(
                f"variance threshold must be in (0, 1], got {variance_threshold}"
            )
        d = min(
            cap,
            max(
                _variance_dim(evals_d[:cap], variance_threshold),
                _variance_dim(evals_s[:cap], variance_threshold),
            ),
        )
    d = choose_dim(xd.shape[0], xs.shape[0], xd.shape[1], d)
    drone_stats = DomainStats(
        mean=mu_d, projection=evecs_d[:, :d].copy(), eigenvalues=evals_d[:d].copy()
    )
    sat_stats = DomainStats(
        mean=mu_s, projection=evecs_s[:, :d].copy(), eigenvalues=evals_s[:d].copy()
    )
    proj_d = project(drone_stats, xd)
    proj_s = project(sat_stats, xs)
    pairs = build_pairs(drone, satellite, pairing, proj_d, proj_s)
    degenerate = False
    if pairing is PairingStrategy.MUTUAL_NN and len(pairs) < d:
        warnings.warn(
            f"mutual-NN pairing found only {len(pairs)} pairs for d={d}; "
            "rotation fit is degenerate",
            stacklevel=2,
        )
        degenerate = True
    rows_d = np.array([i for i, _ in pairs])
    rows_s = np.array([j for _, j in pairs])
    result = fit_procrustes(proj_d[rows_d], proj_s[rows_s], strict_rotation)
    return AlignmentModel(
        drone_stats=drone_stats,
        satellite_stats=sat_stats,
        rotation=result.rotation,
        d=d,
        pairing=pairing,
        fitted_on=drone.dataset_name or satellite.dataset_name,
        set_hash=descriptor_set_hash([drone, satellite]),
        degenerate=degenerate or result.degenerate,
    )


def apply_alignment(
    model: AlignmentModel,
    descriptor: np.ndarray,
    domain: Domain,
    rotate: bool = True,
) -> np.ndarray:
    """Map a raw descriptor into the shared metric space.

    Drone descriptors are centered, projected, and rotated; satellite
    descriptors are centered and projected only. ``rotate=False`` skips the
    rotation (PCA-only ablation mode).
    """
    if domain is Domain.DRONE:
        out = project(model.drone_stats, descriptor)
        return out @ model.rotation if rotate else out
    return project(model.satellite_stats, descriptor)


def align_set(
    model: AlignmentModel, dset: DescriptorSet, rotate: bool = True
) -> np.ndarray:
    """Apply the model to every descriptor of a set, honoring per-entry domains."""
    matrix = dset.matrix()
    out = np.empty((len(dset), model.d))
    domains = np.array([e.domain is Domain.DRONE for e in dset])
    if np.any(domains):
        out[domains] = apply_alignment(model, matrix[domains], Domain.DRONE, rotate)
    if np.any(~domains):
        out[~domains] = apply_alignment(model, matrix[~domains], Domain.SATELLITE, rotate)
    return out


def check_set_hash(model: AlignmentModel, sets: list[DescriptorSet]) -> bool:
    """Warn when descriptor sets differ from what the model was fitted on."""
    actual = descriptor_set_hash(sets)
    if actual != model.set_hash:
        warnings.warn(
            f"descriptor-set hash {actual:016x} does not match the model's "
            f"fitted hash {model.set_hash:016x}; the model was fitted on "
            "different data",
            stacklevel=2,
        )
        return False
    return True


def _pack_matrix(m: np.ndarray) -> bytes:
    # Column-major f64, little-endian.
    return np.asfortranarray(m, dtype="<f8").tobytes(order="F")


def save_model(model: AlignmentModel, path: str | Path) -> None:
    """Serialize the model to the binary format (magic "CVAM")."""
    d, dim = model.d, model.ambient_dim
    body = [MODEL_MAGIC, struct.pack("<HII", MODEL_VERSION, d, dim)]
    body.append(model.drone_stats.mean.astype("<f8").tobytes())
    body.append(_pack_matrix(model.drone_stats.projection))
    body.append(model.satellite_stats.mean.astype("<f8").tobytes())
    body.append(_pack_matrix(model.satellite_stats.projection))
    body.append(_pack_matrix(model.rotation))
    blob = b"".join(body)
    checksum = zlib.crc32(blob) & 0xFFFFFFFF
    blob += struct.pack("<I", checksum)
    blob += struct.pack("<Q", model.set_hash)
    atomic_write_bytes(path, blob)


def load_model(path: str | Path) -> AlignmentModel:
    """Read a model file, verifying magic, version, sizes, and checksum."""
    raw = Path(path).read_bytes()
    head = struct.calcsize("<4sHII")
    if len(raw) < head:
        raise DataValidationError(f"{path}: truncated model file")
    magic, version, d, dim = struct.unpack_from("<4sHII", raw)
    if magic != MODEL_MAGIC:
        raise DataValidationError(f"{path}: unrecognized format (bad magic {magic!r})")
    if version != MODEL_VERSION:
        raise DataValidationError(f"{path}: unsupported model version {version}")
    matrix_bytes = 8 * (dim + dim * d + dim + dim * d + d * d)
    expected = head + matrix_bytes + 4 + 8
    if len(raw) != expected:
        raise DataValidationError(
            f"{path}: truncated model file, expected {expected} bytes, got {len(raw)}"
        )
    checksum_offset = head + matrix_bytes
    (stored_crc,) = struct.unpack_from("<I", raw, checksum_offset)
    actual_crc = zlib.crc32(raw[:checksum_offset]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise DataValidationError(f"{path}: corrupted checksum")
    (set_hash,) = struct.unpack_from("<Q", raw, checksum_offset + 4)

    offset = head

    def take(count: int, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        return arr.reshape(shape, order="F").copy()

    mu_d = take(dim, (dim,))
    p_d = take(dim * d, (dim, d))
    mu_s = take(dim, (dim,))
    p_s = take(dim * d, (dim, d))
    rotation = take(d * d, (d, d))
    zeros = np.zeros(d)
    return AlignmentModel(
        drone_stats=DomainStats(mean=mu_d, projection=p_d, eigenvalues=zeros),
        satellite_stats=DomainStats(mean=mu_s, projection=p_s, eigenvalues=zeros),
        rotation=rotation,
        d=d,
        set_hash=set_hash,
    )
