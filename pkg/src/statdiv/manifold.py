"""Subspace-manifold primitives and a projection-based conjugate gradient.

Points are orthonormal D x d matrices identified with their column span.
The optimizer consumes a cost callback and the plain matrix of partial
derivatives; it projects to the tangent space, takes Polak-Ribiere
(non-negative) conjugate directions with re-projection in place of
parallel transport, and retracts with a sign-fixed thin QR.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "CgOptions",
    "CgResult",
    "random_orthonormal",
    "is_orthonormal",
    "tangent_project",
    "retract",
    "cg_minimize",
    "save_trace",
]

ORTHONORMAL_TOL = 1e-10


def random_orthonormal(dim: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random D x d orthonormal matrix with a deterministic sign fix."""
    if rank > dim:
        raise ValueError(f"rank {rank} exceeds ambient dimension {dim}")
    gauss = rng.standard_normal((dim, rank))
    q, r = np.linalg.qr(gauss)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def is_orthonormal(w: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] < w.shape[1]:
        return False
    gram = w.T @ w
    return bool(np.max(np.abs(gram - np.eye(w.shape[1]))) <= tol)


def _check_point(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if not is_orthonormal(w):
        raise ValueError("expected a column-orthonormal D x d matrix")
    return w


def tangent_project(w: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Horizontal component (I - W W') G of an ambient direction."""
    w = np.asarray(w, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != w.shape:
        raise ValueError(f"shape mismatch: point {w.shape} vs direction {grad.shape}")
    return grad - w @ (w.T @ grad)


def retract(w: np.ndarray, direction: np.ndarray, step: float) -> np.ndarray:
    """First-order retraction: orthonormal factor of W + step * H.

    The R factor's diagonal signs are fixed so the output is a
    deterministic function of the inputs. Raises if W + step*H loses rank
    (the caller should shrink the step).
    """
    w = np.asarray(w, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if direction.shape != w.shape:
        raise ValueError(f"shape mismatch: point {w.shape} vs direction {direction.shape}")
    if step == 0.0 or not np.any(direction):
        return w.copy()
    moved = w + step * direction
    q, r = np.linalg.qr(moved)
    diag = np.diag(r)
    if np.min(np.abs(diag)) < 1e-14 * max(1.0, float(np.max(np.abs(moved)))):
        raise np.linalg.LinAlgError("retraction input is rank deficient; shrink the step")
    signs = np.sign(diag)
    return q * signs


@dataclass(frozen=True)
class CgOptions:
    """Stopping and line-search controls for the conjugate gradient loop."""

    max_iters: int = 50
    grad_tol: float = 1e-5
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    rel_cost_tol: float = 1e-6
    max_backtracks: int = 40

    def __post_init__(self):
        if self.max_iters < 1 or self.max_backtracks < 1:
            raise ValueError("iteration counts must be >= 1")
        for name in ("grad_tol", "armijo_c1", "initial_step", "rel_cost_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")


@dataclass(frozen=True)
class CgResult:
    """Optimized point plus the per-iterate record (iteration, cost,
    gradient norm, accepted step)."""

    point: np.ndarray
    cost: float
    trace: np.ndarray  # columns: iteration, cost, grad_norm, step
    converged: bool
    stop_reason: str

    @property
    def costs(self) -> np.ndarray:
        return self.trace[:, 1]

    @property
    def iterations(self) -> int:
        return int(self.trace[-1, 0])


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b))


def cg_minimize(cost: Callable[[np.ndarray], float],
                egrad: Callable[[np.ndarray], np.ndarray],
                w0: np.ndarray,
                opts: CgOptions = CgOptions()) -> CgResult:
    """Minimize `cost` over orthonormal frames, given the ambient gradient.

    Every accepted iterate satisfies the orthonormality invariant, the
    recorded cost sequence is non-increasing (Armijo acceptance), and the
    whole run is a pure function of (cost, egrad, w0, opts).
    """
    w = _check_point(w0)
    f = float(cost(w))
    g = tangent_project(w, egrad(w))
    g_norm = float(np.linalg.norm(g))
    rows = [(0, f, g_norm, 0.0)]

    if g_norm <= opts.grad_tol:
        return CgResult(point=w, cost=f, trace=np.array(rows), converged=True,
                        stop_reason="grad_tol")

    direction = -g
    converged = False
    stop_reason = "max_iters"
    for iteration in range(1, opts.max_iters + 1):
        slope = _inner(g, direction)
        if slope >= 0:
            direction = -g
            slope = -_inner(g, g)

        step = opts.initial_step
        accepted = None
        for _ in range(opts.max_backtracks):
            try:
                candidate = retract(w, direction, step)
            except np.linalg.LinAlgError:
                step *= opts.backtrack_factor
                continue
            f_new = float(cost(candidate))
            if f_new <= f + opts.armijo_c1 * step * slope:
                accepted = (candidate, f_new, step)
                break
            step *= opts.backtrack_factor
        if accepted is None:
            stop_reason = "line_search_failed"
            break
        w_new, f_new, step = accepted

        g_new = tangent_project(w_new, egrad(w_new))
        g_norm = float(np.linalg.norm(g_new))
        rows.append((iteration, f_new, g_norm, step))

        rel_change = abs(f - f_new) / max(abs(f), 1e-12)

        # Polak-Ribiere with the previous gradient re-projected to the new
        # tangent space; clamping at 0 restarts along steepest descent.
        g_old_moved = tangent_project(w_new, g)
        denom = _inner(g, g)
        beta = max(0.0, _inner(g_new, g_new - g_old_moved) / denom) if denom > 0 else 0.0
        direction = -g_new + beta * tangent_project(w_new, direction)

        w, f, g = w_new, f_new, g_new

        if g_norm <= opts.grad_tol:
            converged = True
            stop_reason = "grad_tol"
            break
        if rel_change <= opts.rel_cost_tol:
            converged = True
            stop_reason = "rel_cost_tol"
            break

    return CgResult(point=w, cost=f, trace=np.array(rows), converged=converged,
                    stop_reason=stop_reason)


def save_trace(result_or_trace, csv_path) -> None:
    """Write the iterate record as CSV with columns
    iteration,cost,grad_norm,step."""
    if isinstance(result_or_trace, CgResult):
        trace = result_or_trace.trace
    else:
        trace = result_or_trace
    csv_path = Path(csv_path)
    with csv_path.open("w") as fh:
        fh.write("iteration,cost,grad_norm,step\n")
        for row in np.asarray(trace):
            fh.write(f"{int(row[0])},{row[1]:.17g},{row[2]:.17g},{row[3]:.17g}\n")
