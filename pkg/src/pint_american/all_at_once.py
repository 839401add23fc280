"""The space-time obstacle problem ``min(M v - f, v - Phi) = 0`` and its
outer policy iteration.

``M = B (x) I_s - I_t (x) L`` with ``B = tridiag(-1, 1, 0) / tau`` couples all
backward-Euler steps; the initial condition only enters through the first
block of ``f``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp

from .lcp_core import PolicyIterationError, policy_from_pair
from .linear_kernels import sparse_lu
from .market_models import SpatialSystem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AllAtOnceSystem:
    spatial: SpatialSystem
    n_t: int
    tau: float
    f: np.ndarray = field(repr=False)
    Phi: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, spatial: SpatialSystem, n_t: int, T: float, u0=None) -> "AllAtOnceSystem":
        if n_t < 1:
            raise ValueError("n_t must be positive")
        tau = T / n_t
        u0 = spatial.phi if u0 is None else np.asarray(u0, float)
        F = spatial.g_steps(n_t, tau)
        F[0] += u0 / tau
        Phi = np.tile(spatial.phi, n_t)
        return cls(spatial=spatial, n_t=n_t, tau=tau, f=F.ravel(), Phi=Phi)

    @property
    def n_s(self) -> int:
        return self.spatial.size

    @property
    def size(self) -> int:
        return self.n_t * self.n_s

    def blocks(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v).reshape(self.n_t, self.n_s)

    def time_matrix(self) -> sp.csr_matrix:
        return (sp.identity(self.n_t) - sp.eye(self.n_t, k=-1)).tocsr() / self.tau

    def sparse_M(self) -> sp.csr_matrix:
        It = sp.identity(self.n_t, format="csr")
        Is = sp.identity(self.n_s, format="csr")
        return (sp.kron(self.time_matrix(), Is) - sp.kron(It, self.spatial.L)).tocsr()


def apply_M(system: AllAtOnceSystem, v: np.ndarray) -> np.ndarray:
    """Matrix-free ``M v``: block n is ``(v_n - v_{n-1})/tau - L v_n`` with ``v_0 = 0``."""
    V = system.blocks(v)
    out = V / system.tau
    out[1:] -= V[:-1] / system.tau
    out -= (system.spatial.L @ V.T).T
    return out.ravel()


def apply_Mk(system: AllAtOnceSystem, mask: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``v + Theta (M v - v)``."""
    return v + mask * (apply_M(system, v) - v)


def policy_rhs(system: AllAtOnceSystem, mask: np.ndarray) -> np.ndarray:
    """``f_k = Phi + Theta (f - Phi)``."""
    return system.Phi + mask * (system.f - system.Phi)


def residual_floor_scale(system: AllAtOnceSystem, mask: np.ndarray, w: np.ndarray,
                         f_k: np.ndarray) -> float:
    """``|| |M_k| |w| || + ||f_k||``: the size of residual that rounding alone
    produces when ``M_k w - f_k`` is evaluated in floating point."""
    W = np.abs(system.blocks(w))
    absM = W / system.tau
    absM[1:] += W[:-1] / system.tau
    absM += (abs(system.spatial.L) @ W.T).T
    theta = np.asarray(mask, float)
    absMk = (1.0 - theta) * W.ravel() + theta * absM.ravel()
    return float(np.linalg.norm(absMk) + np.linalg.norm(f_k))


def sparse_Mk(system: AllAtOnceSystem, mask: np.ndarray) -> sp.csr_matrix:
    eye = sp.identity(system.size, format="csr")
    return (eye + sp.diags(np.asarray(mask, float)) @ (system.sparse_M() - eye)).tocsr()


@dataclass
class InnerResult:
    v: np.ndarray
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = True
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0


class InnerSolver(Protocol):
    def __call__(self, system: AllAtOnceSystem, mask: np.ndarray, f_k: np.ndarray,
                 w0: np.ndarray) -> InnerResult: ...


class DirectInnerSolver:
    """Sparse LU of the assembled policy matrix (the non-PinT reference)."""

    name = "direct"

    def __call__(self, system, mask, f_k, w0):
        t0 = time.perf_counter()
        lu = sparse_lu(sparse_Mk(system, mask))
        t1 = time.perf_counter()
        v = lu.solve(f_k)
        return InnerResult(v=v, setup_seconds=t1 - t0, solve_seconds=time.perf_counter() - t1)


class InnerSolveError(RuntimeError):
    pass


@dataclass
class PolicyReport:
    """Outer-iteration bookkeeping of one all-at-once solve."""

    p_iter: int = 0
    gmres_counts: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    inner_residuals: list = field(default_factory=list)
    ranks: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0
    wall_seconds: float = 0.0

    @property
    def gmres_total(self) -> int:
        return int(sum(self.gmres_counts))

    @property
    def gmres_avg(self) -> float:
        return self.gmres_total / self.p_iter if self.p_iter else 0.0


def policy_iterate_all_at_once(
    system: AllAtOnceSystem,
    inner_solver: InnerSolver,
    tol1: float = 1e-6,
    max_iter: int = 200,
    v0: np.ndarray | None = None,
    track_rank: bool = False,
):
    """Policy iteration on the space-time problem starting from ``v0 = Phi``.

    Each outer step solves ``M_k v = f_k`` with ``inner_solver`` warm-started
    at the previous iterate, then recomputes the policy from the unmasked pair
    ``(M v - f, v - Phi)``.  Stops when ``||min(M v - f, v - Phi)||_inf <= tol1``
    or the policy repeats.
    """
    t_start = time.perf_counter()
    report = PolicyReport()
    v = np.array(system.Phi if v0 is None else v0, dtype=float)
    pde = apply_M(system, v) - system.f
    obstacle = v - system.Phi
    report.residuals.append(float(np.max(np.abs(np.minimum(pde, obstacle)))))
    mask = policy_from_pair(pde, obstacle)
    while True:
        if report.p_iter >= max_iter:
            report.stop_reason = "max_iter"
            report.wall_seconds = time.perf_counter() - t_start
            raise PolicyIterationError(
                f"all-at-once policy iteration did not converge in {max_iter} iterations "
                f"(residual {report.residuals[-1]:.3e})", v, report)
        if track_rank:
            report.ranks.append(tmat_view(mask, system.n_t, system.n_s).rank)
        f_k = policy_rhs(system, mask)
        try:
            inner = inner_solver(system, mask, f_k, v)
        except Exception as exc:
            raise InnerSolveError(
                f"inner solve failed at policy iteration {report.p_iter + 1}: {exc}") from exc
        if not inner.converged:
            log.warning("inner solve did not reach its tolerance at policy iteration %d",
                        report.p_iter + 1)
        v = inner.v
        report.p_iter += 1
        report.gmres_counts.append(inner.iterations)
        report.inner_residuals.append(inner.residuals)
        report.setup_seconds += inner.setup_seconds
        report.solve_seconds += inner.solve_seconds
        pde = apply_M(system, v) - system.f
        obstacle = v - system.Phi
        rk = float(np.max(np.abs(np.minimum(pde, obstacle))))
        report.residuals.append(rk)
        log.debug("policy iteration %d: residual %.3e, inner iterations %d",
                  report.p_iter, rk, inner.iterations)
        if rk <= tol1:
            report.converged, report.stop_reason = True, "residual"
            break
        previous, mask = mask, policy_from_pair(pde, obstacle)
        if np.array_equal(mask, previous):
            report.converged, report.stop_reason = True, "policy_repeat"
            break
    report.wall_seconds = time.perf_counter() - t_start
    return v, report


@dataclass(frozen=True)
class TmatView:
    """Mask reshaped to ``n_s x n_t``; column ``j`` is the policy of time block ``j``."""

    matrix: np.ndarray
    rank: int


def tmat_view(mask: np.ndarray, n_t: int, n_s: int) -> TmatView:
    mask = np.asarray(mask)
    if mask.size != n_t * n_s:
        raise ValueError("mask size does not match n_t * n_s")
    T = mask.reshape(n_t, n_s).T.astype(np.uint8)
    if not T.any():
        return TmatView(T, 0)
    sv = np.linalg.svd(T.astype(float), compute_uv=False)
    return TmatView(T, int(np.sum(sv > 1e-10 * sv[0])))
