"""Discrete obstacle problems ``min(Ax - b, x - c) = 0`` and Howard's policy iteration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .linear_kernels import sparse_lu


class PolicyIterationError(RuntimeError):
    """Policy iteration hit its iteration cap without converging."""

    def __init__(self, message, x=None, stats=None):
        super().__init__(message)
        self.x = x
        self.stats = stats


@dataclass(frozen=True)
class Lcp:
    """Obstacle problem data.  ``A`` may be a dense/sparse matrix or any
    object with a ``@`` product."""

    A: object
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        n = len(self.b)
        if len(self.c) != n or self.A.shape != (n, n):
            raise ValueError("Lcp dimensions disagree")

    @property
    def n(self) -> int:
        return len(self.b)


def componentwise_min(x, y) -> np.ndarray:
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return np.minimum(x, y)


def lcp_residual(lcp: Lcp, x: np.ndarray):
    """Return ``r = min(Ax - b, x - c)`` and its max-norm."""
    r = componentwise_min(lcp.A @ x - lcp.b, x - lcp.c)
    return r, float(np.max(np.abs(r), initial=0.0))


def policy_from_pair(ax_minus_b: np.ndarray, x_minus_c: np.ndarray) -> np.ndarray:
    """Policy bits: True where the PDE branch is active (ties count as active)."""
    return ax_minus_b <= x_minus_c


def compute_policy_mask(lcp: Lcp, x: np.ndarray) -> np.ndarray:
    return policy_from_pair(lcp.A @ x - lcp.b, x - lcp.c)


def mask_blocks(mask: np.ndarray, block_size: int) -> np.ndarray:
    """Block view of a stacked mask, shape ``(n_blocks, block_size)``."""
    mask = np.asarray(mask)
    if mask.size % block_size:
        raise ValueError("mask length is not a multiple of the block size")
    return mask.reshape(-1, block_size)


def build_policy_system(lcp: Lcp, mask: np.ndarray):
    """Linearised system for a fixed policy.

    Returns ``(apply, b_k, explicit)`` where ``apply(x) = x + mask*(Ax - x)``,
    ``b_k = c + mask*(b - c)`` and ``explicit()`` builds the sparse matrix
    ``I + diag(mask) (A - I)``.
    """
    theta = np.asarray(mask, dtype=float)
    if theta.shape != (lcp.n,):
        raise ValueError("mask length does not match the problem")

    def apply(x):
        return x + theta * (lcp.A @ x - x)

    def explicit():
        A = sp.csr_matrix(lcp.A)
        eye = sp.identity(lcp.n, format="csr")
        return (eye + sp.diags(theta) @ (A - eye)).tocsr()

    b_k = lcp.c + theta * (lcp.b - lcp.c)
    return apply, b_k, explicit


def direct_policy_solver(lcp: Lcp, mask: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Default inner solver: sparse LU of the explicit policy matrix."""
    _, b_k, explicit = build_policy_system(lcp, mask)
    return sparse_lu(explicit()).solve(b_k)


@dataclass
class PolicyStats:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""


def solve_lcp_policy(
    lcp: Lcp,
    linear_solver: Optional[Callable] = None,
    x0: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    max_iter: int = 200,
    raise_on_failure: bool = True,
):
    """Howard's algorithm for ``min(Ax - b, x - c) = 0``.

    ``linear_solver(lcp, mask, x_prev)`` must return the solution of the policy
    system.  Iteration stops once the max-norm residual is at most ``tol`` or
    the policy repeats; ``iterations`` counts linear solves, so a start that is
    already optimal still costs one.
    """
    solve = linear_solver or direct_policy_solver
    x = np.array(lcp.c if x0 is None else x0, dtype=float)
    stats = PolicyStats()
    _, rnorm = lcp_residual(lcp, x)
    stats.residuals.append(rnorm)
    mask = compute_policy_mask(lcp, x)
    while True:
        if stats.iterations >= max_iter:
            stats.stop_reason = "max_iter"
            if raise_on_failure:
                raise PolicyIterationError(
                    f"policy iteration did not converge in {max_iter} iterations "
                    f"(residual {rnorm:.3e})", x, stats)
            return x, stats
        x = solve(lcp, mask, x)
        stats.iterations += 1
        _, rnorm = lcp_residual(lcp, x)
        stats.residuals.append(rnorm)
        if rnorm <= tol:
            stats.converged, stats.stop_reason = True, "residual"
            return x, stats
        previous, mask = mask, compute_policy_mask(lcp, x)
        if np.array_equal(mask, previous):
            stats.converged, stats.stop_reason = True, "policy_repeat"
            return x, stats


def brute_force_lcp(lcp: Lcp, tol: float = 1e-10, chunk: int = 4096) -> np.ndarray:
    """Solve a small LCP by enumerating every active set.

    For each subset ``E`` (where ``x = c``) the remaining rows solve
    ``(Ax - b)_i = 0``; a candidate is accepted when both inequalities hold.
    """
    n = lcp.n
    if n > 20:
        raise ValueError("brute force limited to n <= 20")
    A = lcp.A.toarray() if sp.issparse(lcp.A) else np.asarray(lcp.A, dtype=float)
    b, c = np.asarray(lcp.b, float), np.asarray(lcp.c, float)
    scale = 1.0 + max(np.max(np.abs(b)), np.max(np.abs(c)))
    eye = np.eye(n)
    shifts = np.arange(n)
    for start in range(0, 2**n, chunk):
        codes = np.arange(start, min(start + chunk, 2**n))
        batch = ((codes[:, None] >> shifts) & 1).astype(bool)
        # rows in the active set read x_i = c_i, the others (Ax)_i = b_i
        mats = np.where(batch[:, :, None], eye[None], A[None])
        rhs = np.where(batch, c[None], b[None])
        try:
            xs = np.linalg.solve(mats, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            xs = np.stack([_solve_or_nan(m, v) for m, v in zip(mats, rhs)])
        ok = np.all(np.isfinite(xs), axis=1)
        w = xs @ A.T - b
        ok &= np.all(w >= -tol * scale, axis=1) & np.all(xs - c >= -tol * scale, axis=1)
        ok &= np.all(np.abs(np.minimum(w, xs - c)) <= tol * scale, axis=1)
        if np.any(ok):
            return xs[np.argmax(ok)]
    raise ValueError("no active set solves the LCP (matrix is not a P-matrix?)")


def _solve_or_nan(m, v):
    try:
        return np.linalg.solve(m, v)
    except np.linalg.LinAlgError:
        return np.full_like(v, np.nan)
