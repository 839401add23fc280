"""Drivers for single prices, temporal convergence tables, the iteration
matrix and the volatility sweep."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .all_at_once import (AllAtOnceSystem, DirectInnerSolver, apply_M,
                          policy_iterate_all_at_once, policy_rhs)
from .config import ConfigError, RunConfig, build_config
from .lcp_core import policy_from_pair
from .market_models import Grid1D, Grid2D, SpatialSystem, assemble
from .preconditioners import (NkpaInnerSolver, ProjectedInnerSolver,
                              spectrum_diagnostics)
from .reports import SolveReport
from .sequential import price_sequential


def build_spatial(config: RunConfig) -> SpatialSystem:
    params = config.params()
    if config.is_2d:
        grid = Grid2D(config.s_max, config.v_max, config.ns, config.nv,
                      v_from_zero=params.kind.value == "heston2d")
    else:
        grid = Grid1D(config.s_max, config.ns)
    return assemble(params, grid)


def make_inner_solver(config: RunConfig):
    if config.method == "direct":
        return DirectInnerSolver()
    if config.resolved_preconditioner() == "nkpa":
        return NkpaInnerSolver(alpha=config.alpha, psi_strategy=config.psi, tol=config.tol2,
                               workers=config.workers)
    return ProjectedInnerSolver(alpha=config.alpha, tol=config.tol2, workers=config.workers)


def solve(config: RunConfig, n_t: int, spatial: Optional[SpatialSystem] = None) -> SolveReport:
    """Price one configuration at one ``n_t``.

    Raises ``PolicyIterationError`` when the outer iteration does not converge.
    """
    spatial = spatial if spatial is not None else build_spatial(config)
    T = config.T
    report = SolveReport(model=config.model, method=config.method, n_s=config.ns,
                         n_v=config.nv if config.is_2d else None, n_t=n_t,
                         alpha=config.alpha, value=math.nan, p_iter=0,
                         reference=config.reference)
    t0 = time.perf_counter()
    if config.method == "sequential":
        res = price_sequential(spatial, n_t, T, tol=config.tol1, max_iter=config.max_iter)
        final = res.final
        report.p_iter = res.p_iter_total
        report.residuals = res.residuals
        report.solve_seconds = res.wall_seconds
    else:
        system = AllAtOnceSystem.build(spatial, n_t, T)
        v, rep = policy_iterate_all_at_once(system, make_inner_solver(config), tol1=config.tol1,
                                            max_iter=config.max_iter)
        final = system.blocks(v)[-1]
        report.p_iter = rep.p_iter
        report.gmres_total = rep.gmres_total
        report.gmres_counts = list(rep.gmres_counts)
        report.residuals = list(rep.residuals)
        report.converged = rep.converged
        report.setup_seconds = rep.setup_seconds
        report.solve_seconds = rep.solve_seconds
    report.value = spatial.value_at(final, config.eval_point, T)
    report.wall_seconds = time.perf_counter() - t0
    return report


def run_config(config: RunConfig) -> list[SolveReport]:
    spatial = build_spatial(config)
    return [solve(config, n_t, spatial) for n_t in config.nt]


def run_example(example_id: int, overrides: Optional[dict] = None) -> list[SolveReport]:
    """Run one of the three preset problems, one report per ``N_t``."""
    return run_config(build_config(example_id, overrides=overrides))


@dataclass
class ConvergenceTable:
    reports: list
    orders: list = field(default_factory=list)  # log2(e(N_t)/e(2N_t)), None where undefined

    def ratios(self) -> list:
        return [None if o is None else 2.0 ** o for o in self.orders]


def observed_orders(n_t: Sequence[int], errors: Sequence[float]) -> list:
    """``log2(e_i / e_{i+1})`` for consecutive pairs with ``n_t`` doubling."""
    orders = []
    for i in range(len(errors) - 1):
        a, b = errors[i], errors[i + 1]
        if n_t[i + 1] != 2 * n_t[i] or a is None or b is None or a <= 0 or b <= 0:
            orders.append(None)
        else:
            orders.append(math.log2(a / b))
    return orders


def convergence_sweep(config: RunConfig) -> ConvergenceTable:
    if len(config.nt) < 3:
        raise ConfigError("a convergence sweep needs at least three N_t values")
    if config.reference is None:
        raise ConfigError("a convergence sweep needs a reference value")
    reports = run_config(config)
    return ConvergenceTable(reports, observed_orders(config.nt, [r.error for r in reports]))


@dataclass(frozen=True)
class IterationCell:
    n_s: int
    n_t: int
    p_iter: int
    gmres_avg: float
    gmres_total: int


def iteration_matrix(config: RunConfig, ns_list: Sequence[int],
                     nt_list: Sequence[int]) -> list[IterationCell]:
    """PinT policy iterations and average GMRES counts over an ``N_t x N_s`` grid."""
    cells = []
    for n_s in ns_list:
        cfg = dataclasses.replace(config, ns=n_s, method="pint")
        spatial = build_spatial(cfg)
        for n_t in nt_list:
            rep = solve(cfg, n_t, spatial)
            cells.append(IterationCell(n_s, n_t, rep.p_iter, rep.gmres_avg, rep.gmres_total))
    return cells


def iteration_matrix_csv(cells: Sequence[IterationCell]) -> str:
    """Rows are ``N_t``, columns ``N_s``; each cell reads ``P (avg)``."""
    ns = sorted({c.n_s for c in cells})
    nt = sorted({c.n_t for c in cells})
    table = {(c.n_t, c.n_s): c for c in cells}
    lines = ["N_t\\N_s," + ",".join(str(n) for n in ns)]
    for t in nt:
        row = [f"{table[t, s].p_iter} ({table[t, s].gmres_avg:.2f})" if (t, s) in table else ""
               for s in ns]
        lines.append(f"{t}," + ",".join(row))
    return "\n".join(lines) + "\n"


def sigma_sweep(config: RunConfig, sigmas: Sequence[float]) -> list[SolveReport]:
    """Reprice with each volatility; the reference is dropped since it depends on sigma."""
    out = []
    for sigma in sigmas:
        cfg = dataclasses.replace(config, sigma=float(sigma), reference=None, method="pint")
        rep = solve(cfg, cfg.nt[0])
        out.append(rep)
    return out


def spectrum(config: RunConfig, n_t: int, iteration: int = 0, max_dim: int = 4096) -> dict:
    """Spectra of the policy system at outer step ``iteration`` (0 uses the
    policy of the payoff guess)."""
    spatial = build_spatial(config)
    system = AllAtOnceSystem.build(spatial, n_t, config.T)
    v = system.Phi.copy()
    mask = policy_from_pair(apply_M(system, v) - system.f, v - system.Phi)
    solver = DirectInnerSolver()
    for _ in range(iteration):
        v = solver(system, mask, policy_rhs(system, mask), v).v
        mask = policy_from_pair(apply_M(system, v) - system.f, v - system.Phi)
    kind = config.resolved_preconditioner()
    return spectrum_diagnostics(system, mask, kind=kind, alpha=config.alpha,
                                psi_strategy=config.psi, max_dim=max_dim)
