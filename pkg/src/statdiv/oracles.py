"""Closed-form and exact-discrete reference divergences.

These are the independent yardsticks used by tests and the `validate`
command. Nothing here touches the empirical estimators: these functions
work on explicit Gaussian parameters, SPD matrices, or finite histograms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianParams",
    "bhattacharyya_coefficient_gaussian",
    "hellinger_gaussian_closed_form",
    "jeffrey_gaussian_closed_form",
    "stein_divergence",
    "hellinger_discrete_exact",
    "jeffrey_discrete_exact",
]

_HIST_SMOOTHING = 1e-12


@dataclass(frozen=True)
class GaussianParams:
    """Mean vector and full covariance of a multivariate normal."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ValueError("covariance is not symmetric")
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise ValueError("covariance is not positive definite")
        mean = mean.copy(); mean.flags.writeable = False
        cov = cov.copy(); cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _check_same_dim(a: GaussianParams, b: GaussianParams):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def _logdet_spd(mat: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(mat)
    if sign <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return logdet


def bhattacharyya_coefficient_gaussian(a: GaussianParams, b: GaussianParams) -> float:
    """B(a, b) = exp(-D_B) for two Gaussians, always in (0, 1].

    D_B = (1/8) dmu' S^-1 dmu + (1/2) ln(det S / sqrt(det Sa det Sb)),
    S = (Sa + Sb) / 2.
    """
    _check_same_dim(a, b)
    avg = 0.5 * (a.cov + b.cov)
    dmu = a.mean - b.mean
    solve = np.linalg.solve(avg, dmu)
    d_b = 0.125 * float(dmu @ solve) + 0.5 * (
        _logdet_spd(avg) - 0.5 * (_logdet_spd(a.cov) + _logdet_spd(b.cov))
    )
    return float(np.exp(-d_b))


def hellinger_gaussian_closed_form(a: GaussianParams, b: GaussianParams) -> float:
    """Squared Hellinger distance between Gaussians: 2 - 2 B(a, b), in [0, 2)."""
    return 2.0 - 2.0 * bhattacharyya_coefficient_gaussian(a, b)


def jeffrey_gaussian_closed_form(a: GaussianParams, b: GaussianParams) -> float:
    """Symmetrized KL divergence between Gaussians, KL(a||b) + KL(b||a)."""
    _check_same_dim(a, b)

    def kl(p: GaussianParams, q: GaussianParams) -> float:
        d = p.dim
        q_inv_p = np.linalg.solve(q.cov, p.cov)
        dmu = q.mean - p.mean
        maha = float(dmu @ np.linalg.solve(q.cov, dmu))
        return 0.5 * (float(np.trace(q_inv_p)) + maha - d + _logdet_spd(q.cov) - _logdet_spd(p.cov))

    return kl(a, b) + kl(b, a)


def stein_divergence(a: np.ndarray, b: np.ndarray) -> float:
    """S(A, B) = ln det((A+B)/2) - (1/2) ln det(A B) on SPD matrices."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected equal-size square matrices, got {a.shape} and {b.shape}")
    for mat in (a, b):
        if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-10 or np.min(np.linalg.eigvalsh(mat)) <= 0:
            raise ValueError("inputs must be symmetric positive definite")
    return _logdet_spd(0.5 * (a + b)) - 0.5 * (_logdet_spd(a) + _logdet_spd(b))


def _check_histogram(h: np.ndarray) -> np.ndarray:
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.ndim != 1 or h.size == 0:
        raise ValueError(f"histogram must be a non-empty vector, got shape {h.shape}")
    if np.any(h < 0):
        raise ValueError("histogram entries must be non-negative")
    if abs(float(h.sum()) - 1.0) > 1e-12:
        raise ValueError(f"histogram must sum to 1, got {h.sum()!r}")
    return h


def hellinger_discrete_exact(h1, h2) -> float:
    """Sum_k (sqrt(h1_k) - sqrt(h2_k))^2 over a common finite support."""
    h1 = _check_histogram(h1)
    h2 = _check_histogram(h2)
    if h1.size != h2.size:
        raise ValueError(f"length mismatch: {h1.size} vs {h2.size}")
    return float(np.sum((np.sqrt(h1) - np.sqrt(h2)) ** 2))


def jeffrey_discrete_exact(h1, h2) -> float:
    """Sum_k (h1_k - h2_k) ln(h1_k / h2_k) >= 0.

    Zero bins in either histogram are handled by adding 1e-12 to every bin
    of both and renormalizing, which keeps the value finite and symmetric.
    """
    h1 = _check_histogram(h1)
    h2 = _check_histogram(h2)
    if h1.size != h2.size:
        raise ValueError(f"length mismatch: {h1.size} vs {h2.size}")
    if np.any(h1 == 0) or np.any(h2 == 0):
        h1 = (h1 + _HIST_SMOOTHING) / (1.0 + h1.size * _HIST_SMOOTHING)
        h2 = (h2 + _HIST_SMOOTHING) / (1.0 + h2.size * _HIST_SMOOTHING)
    return float(np.sum((h1 - h2) * (np.log(h1) - np.log(h2))))
