"""Gram matrices on collections of feature sets.

Three kernels act on pairwise divergences (Gaussian and Laplace maps of
the squared Hellinger distance, and an exponential map of the Jeffrey
divergence); two baselines act on per-set geometric summaries (projection
kernel between subspaces, log-Euclidean inner product between regularized
covariances).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .divergence import DivergenceKind, cross_divergence_matrix, divergence_matrix

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "GramMatrix",
    "SIGMA_GRID",
    "kernel_from_divergence",
    "gram",
    "cross_gram",
    "min_eigenvalue",
    "set_to_subspace",
    "set_to_covariance",
    "save_gram_matrix",
    "load_gram_matrix",
]

# Kernel bandwidth grid used by the experiment runner's search.
SIGMA_GRID = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0)


class KernelFamily(Enum):
    HELLINGER_GAUSSIAN = "hg"
    HELLINGER_LAPLACE = "hl"
    JEFFREY_EXPONENTIAL = "j"
    GRASSMANN_PROJECTION = "gda"
    SPD_LOG_EUCLIDEAN = "cdl"


_DIVERGENCE_FAMILIES = {
    KernelFamily.HELLINGER_GAUSSIAN: DivergenceKind.HELLINGER_SQUARED,
    KernelFamily.HELLINGER_LAPLACE: DivergenceKind.HELLINGER_SQUARED,
    KernelFamily.JEFFREY_EXPONENTIAL: DivergenceKind.JEFFREY,
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its parameters.

    `sigma` scales the divergence-based kernels and is ignored by the two
    baselines; `subspace_dim` is required by the projection kernel only.
    """

    family: KernelFamily
    sigma: float = 0.1
    subspace_dim: int | None = None

    def __post_init__(self):
        if self.sigma <= 0 or not np.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.family is KernelFamily.GRASSMANN_PROJECTION:
            if self.subspace_dim is None or int(self.subspace_dim) < 1:
                raise ValueError("the projection kernel needs subspace_dim >= 1")
            object.__setattr__(self, "subspace_dim", int(self.subspace_dim))


def kernel_from_divergence(delta, spec: KernelSpec):
    """Map a divergence value (or array) through the kernel of `spec`.

    Hellinger families expect the squared Hellinger distance, bounded by 2;
    the Laplace variant applies exp(-sigma * sqrt(delta)). The Jeffrey
    family applies exp(-sigma * delta) to the Jeffrey divergence itself
    (not its square). Results lie in (0, 1].
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ValueError("divergence values must be non-negative")
    family = spec.family
    if family in (KernelFamily.HELLINGER_GAUSSIAN, KernelFamily.HELLINGER_LAPLACE):
        if np.any(delta > 2.0 + 1e-9):
            raise ValueError(
                f"squared Hellinger values must be <= 2, got max {float(np.max(delta))}"
            )
        if family is KernelFamily.HELLINGER_GAUSSIAN:
            out = np.exp(-spec.sigma * delta)
        else:
            out = np.exp(-spec.sigma * np.sqrt(np.maximum(delta, 0.0)))
    elif family is KernelFamily.JEFFREY_EXPONENTIAL:
        out = np.exp(-spec.sigma * delta)
    else:
        raise ValueError(f"{family} is not a divergence-based kernel")
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric m x m kernel matrix with its generating spec."""

    values: np.ndarray
    spec: KernelSpec
    set_ids: tuple[str, ...] = ()
    bw_policy: str = "silverman"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"gram matrix must be square, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("gram matrix contains non-finite entries")
        if np.max(np.abs(values - values.T), initial=0.0) > 1e-10:
            raise ValueError("gram matrix is not symmetric")
        if self.spec.family in _DIVERGENCE_FAMILIES:
            if np.max(np.abs(np.diag(values) - 1.0), initial=0.0) > 1e-12:
                raise ValueError("divergence-kernel gram diagonals must equal 1")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "set_ids", tuple(self.set_ids))

    @property
    def size(self) -> int:
        return self.values.shape[0]


def _features_of(obj) -> np.ndarray:
    return np.asarray(getattr(obj, "features", obj), dtype=float)


def set_to_subspace(samples, p: int) -> np.ndarray:
    """D x p orthonormal basis of the dominant directions of a set.

    Columns are the top-p left singular vectors of the centered, transposed
    feature matrix, with a deterministic sign convention.
    """
    mat = _features_of(samples)
    n, d = mat.shape
    if p < 1 or p > min(n, d):
        raise ValueError(f"subspace dimension p={p} must be in [1, min(n, D)] = [1, {min(n, d)}]")
    centered = mat - mat.mean(axis=0)
    u, _, _ = np.linalg.svd(centered.T, full_matrices=False)
    basis = u[:, :p].copy()
    for j in range(p):
        k = int(np.argmax(np.abs(basis[:, j])))
        if basis[k, j] < 0:
            basis[:, j] = -basis[:, j]
    return basis


def set_to_covariance(samples, ridge: float | None = None) -> np.ndarray:
    """Regularized sample covariance (1/n) Xc' Xc + ridge I, always SPD.

    Default ridge is 1e-3 times the mean per-dimension variance (with a
    tiny absolute floor so degenerate sets stay invertible).
    """
    mat = _features_of(samples)
    n, d = mat.shape
    centered = mat - mat.mean(axis=0)
    cov = (centered.T @ centered) / n
    if ridge is None:
        ridge = max(1e-3 * float(np.trace(cov)) / d, 1e-12)
    elif ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    return cov + ridge * np.eye(d)


def _spd_log(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    if np.min(w) <= 0:
        raise np.linalg.LinAlgError("matrix log needs a positive definite input")
    return (v * np.log(w)) @ v.T


def gram(sets, spec: KernelSpec, bw_policy="silverman") -> GramMatrix:
    """Pairwise kernel matrix over `sets`.

    Divergence families compute the divergence matrix once and map it
    entrywise; the projection kernel uses ||A' B||_F^2 on per-set subspace
    bases; the log-Euclidean kernel uses Tr(log(A)' log(B)) on regularized
    per-set covariances.
    """
    sets = list(sets)
    if not sets:
        raise ValueError("gram needs at least one set")
    ids = tuple(str(getattr(s, "id", f"set{i}")) for i, s in enumerate(sets))
    if spec.family in _DIVERGENCE_FAMILIES:
        div = divergence_matrix(sets, _DIVERGENCE_FAMILIES[spec.family], bw_policy)
        values = kernel_from_divergence(div.values, spec)
        np.fill_diagonal(values, 1.0)
        return GramMatrix(values=values, spec=spec, set_ids=ids, bw_policy=div.bw_policy)
    if spec.family is KernelFamily.GRASSMANN_PROJECTION:
        bases = [set_to_subspace(s, spec.subspace_dim) for s in sets]
        m = len(bases)
        values = np.empty((m, m))
        for i in range(m):
            for j in range(i, m):
                values[i, j] = values[j, i] = float(np.sum((bases[i].T @ bases[j]) ** 2))
        return GramMatrix(values=values, spec=spec, set_ids=ids, bw_policy="n/a")
    # SPD log-Euclidean
    logs = [_spd_log(set_to_covariance(s)) for s in sets]
    m = len(logs)
    values = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            values[i, j] = values[j, i] = float(np.sum(logs[i] * logs[j]))
    return GramMatrix(values=values, spec=spec, set_ids=ids, bw_policy="n/a")


def cross_gram(sets_a, sets_b, spec: KernelSpec, bw_policy="silverman") -> np.ndarray:
    """len(sets_a) x len(sets_b) kernel matrix between two collections."""
    sets_a = list(sets_a)
    sets_b = list(sets_b)
    if spec.family in _DIVERGENCE_FAMILIES:
        cross = cross_divergence_matrix(sets_a, sets_b, _DIVERGENCE_FAMILIES[spec.family], bw_policy)
        return np.asarray(kernel_from_divergence(cross, spec))
    if spec.family is KernelFamily.GRASSMANN_PROJECTION:
        bases_a = [set_to_subspace(s, spec.subspace_dim) for s in sets_a]
        bases_b = [set_to_subspace(s, spec.subspace_dim) for s in sets_b]
        return np.array([[float(np.sum((a.T @ b) ** 2)) for b in bases_b] for a in bases_a])
    logs_a = [_spd_log(set_to_covariance(s)) for s in sets_a]
    logs_b = [_spd_log(set_to_covariance(s)) for s in sets_b]
    return np.array([[float(np.sum(a * b)) for b in logs_b] for a in logs_a])


def min_eigenvalue(gram_values) -> float:
    """Smallest eigenvalue of a symmetric matrix (the PSD diagnostic)."""
    values = getattr(gram_values, "values", gram_values)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {values.shape}")
    if np.max(np.abs(values - values.T), initial=0.0) > 1e-8:
        raise ValueError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(values)[0])


def save_gram_matrix(matrix: GramMatrix, csv_path) -> None:
    """Write values as CSV plus a JSON sidecar describing the kernel."""
    csv_path = Path(csv_path)
    np.savetxt(csv_path, matrix.values, delimiter=",", fmt="%.17g")
    sidecar = {
        "family": matrix.spec.family.value,
        "sigma": matrix.spec.sigma,
        "subspace_dim": matrix.spec.subspace_dim,
        "set_ids": list(matrix.set_ids),
        "bandwidth_policy": matrix.bw_policy,
    }
    csv_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_gram_matrix(csv_path) -> GramMatrix:
    csv_path = Path(csv_path)
    values = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    sidecar = json.loads(csv_path.with_suffix(".json").read_text())
    spec = KernelSpec(
        family=KernelFamily(sidecar["family"]),
        sigma=sidecar["sigma"],
        subspace_dim=sidecar["subspace_dim"],
    )
    return GramMatrix(values=values, spec=spec, set_ids=tuple(sidecar["set_ids"]),
                      bw_policy=sidecar["bandwidth_policy"])
