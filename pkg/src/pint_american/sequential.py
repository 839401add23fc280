"""Backward-Euler time stepping with one obstacle problem per step."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lcp_core import Lcp, build_policy_system, solve_lcp_policy
from .linear_kernels import sparse_lu
from .market_models import SpatialSystem


@dataclass
class SequentialResult:
    trajectory: np.ndarray  # (n_t + 1, n_s); row 0 is the payoff
    p_iter_total: int
    p_iter_per_step: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[-1]

    def stacked(self) -> np.ndarray:
        """Steps 1..n_t stacked like the all-at-once unknown."""
        return self.trajectory[1:].ravel()


class _StepSolver:
    """Policy-system solver for one time step; reuses the LU of the full
    step matrix whenever the policy is entirely on the PDE branch."""

    def __init__(self, step_matrix):
        self.step_matrix = step_matrix
        self._full_lu = None

    def __call__(self, lcp, mask, x0):
        _, b_k, explicit = build_policy_system(lcp, mask)
        if np.all(mask):
            if self._full_lu is None:
                self._full_lu = sparse_lu(self.step_matrix)
            return self._full_lu.solve(b_k)
        return sparse_lu(explicit()).solve(b_k)


def price_sequential(spatial: SpatialSystem, n_t: int, T: float, tol: float = 1e-6,
                     max_iter: int = 200) -> SequentialResult:
    """March ``min((I/tau - L) u^n - (u^{n-1}/tau + g_n), u^n - phi) = 0``
    for ``n = 1..n_t``, warm-starting each step from the previous one."""
    t0 = time.perf_counter()
    tau = T / n_t
    A = (sp.identity(spatial.size, format="csr") / tau - spatial.L).tocsc()
    step_solver = _StepSolver(A)
    G = spatial.g_steps(n_t, tau)
    traj = np.empty((n_t + 1, spatial.size))
    traj[0] = spatial.phi
    result = SequentialResult(trajectory=traj, p_iter_total=0)
    for n in range(1, n_t + 1):
        lcp = Lcp(A=A, b=traj[n - 1] / tau + G[n - 1], c=spatial.phi)
        x, stats = solve_lcp_policy(lcp, step_solver, x0=traj[n - 1], tol=tol,
                                    max_iter=max_iter)
        traj[n] = x
        result.p_iter_per_step.append(stats.iterations)
        result.residuals.append(stats.residuals[-1])
    result.p_iter_total = int(sum(result.p_iter_per_step))
    result.wall_seconds = time.perf_counter() - t0
    return result
