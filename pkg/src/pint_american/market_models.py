"""Grids, payoffs and finite-difference operators for the three option models.

Every operator is assembled in two stages.  A raw stencil matrix acts on the
*full* node set (unknowns plus boundary nodes); an extension map then writes
every full-grid value as an affine function of the unknowns and the Dirichlet
data.  Folding the extension into the stencil yields the spatial matrix
``L`` and the boundary matrix ``G`` with ``g(t) = G @ dirichlet(t)``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .linear_kernels import as_csr

log = logging.getLogger(__name__)


class ModelKind(str, enum.Enum):
    BLACK_SCHOLES_1D = "bs1d"
    SPREAD_2D = "spread2d"
    HESTON_2D = "heston2d"


@dataclass(frozen=True)
class ModelParams:
    """Contract and model parameters.

    ``sigma`` is the Black-Scholes volatility or the Heston vol-of-variance;
    ``sigma1``/``sigma2`` are the two spread-asset volatilities.
    """

    kind: ModelKind
    K: float
    T: float
    r: float
    sigma: Optional[float] = None
    sigma1: Optional[float] = None
    sigma2: Optional[float] = None
    rho: float = 0.0
    kappa: Optional[float] = None
    eta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.K <= 0 or self.T <= 0:
            raise ValueError("strike and maturity must be positive")
        if self.r < 0:
            raise ValueError("interest rate must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"correlation {self.rho} outside [-1, 1]")
        if self.kind is ModelKind.SPREAD_2D:
            vols = (self.sigma1, self.sigma2)
        else:
            vols = (self.sigma,)
        if any(v is None or v < 0 for v in vols):
            raise ValueError(f"{self.kind.value}: volatilities must be given and nonnegative")
        if self.kind is ModelKind.HESTON_2D:
            if self.kappa is None or self.kappa <= 0 or self.eta is None or self.eta <= 0:
                raise ValueError("Heston model needs kappa > 0 and eta > 0")


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on [0, s_max] with ``n_s`` interior unknowns."""

    s_max: float
    n_s: int

    def __post_init__(self):
        if self.n_s < 2:
            raise ValueError("need at least two interior nodes")
        if not self.s_max > 0:
            raise ValueError("non-positive spacing")

    @property
    def h(self) -> float:
        return self.s_max / (self.n_s + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n_s + 1)

    @property
    def full_axis(self) -> np.ndarray:
        return self.h * np.arange(self.n_s + 2)

    @property
    def size(self) -> int:
        return self.n_s


@dataclass(frozen=True)
class Grid2D:
    """Uniform tensor grid on [0, s_max] x [0, v_max].

    ``n_s``/``n_v`` count the unknowns per axis.  The s-axis always carries
    nodes ``i*h_s`` for ``i = 1..n_s`` with ``h_s = s_max/(n_s+1)``.  With
    ``v_from_zero`` the v-axis unknowns are ``j*h_v`` for ``j = 0..n_v-1`` and
    ``h_v = v_max/n_v`` (the v = 0 line is part of the problem); otherwise
    they are ``j = 1..n_v`` with ``h_v = v_max/(n_v+1)``.  Unknown ``(i, j)``
    (zero-based) sits at position ``j*n_s + i``.
    """

    s_max: float
    v_max: float
    n_s: int
    n_v: int
    v_from_zero: bool = False

    def __post_init__(self):
        if self.n_s < 2 or self.n_v < 2:
            raise ValueError("need at least two unknowns per axis")
        if not (self.s_max > 0 and self.v_max > 0):
            raise ValueError("non-positive spacing")

    @property
    def h_s(self) -> float:
        return self.s_max / (self.n_s + 1)

    @property
    def h_v(self) -> float:
        return self.v_max / (self.n_v if self.v_from_zero else self.n_v + 1)

    @property
    def s_nodes(self) -> np.ndarray:
        return self.h_s * np.arange(1, self.n_s + 1)

    @property
    def v_nodes(self) -> np.ndarray:
        start = 0 if self.v_from_zero else 1
        return self.h_v * np.arange(start, start + self.n_v)

    @property
    def full_s_axis(self) -> np.ndarray:
        return self.h_s * np.arange(self.n_s + 2)

    @property
    def full_v_axis(self) -> np.ndarray:
        count = self.n_v + 1 if self.v_from_zero else self.n_v + 2
        return self.h_v * np.arange(count)

    @property
    def size(self) -> int:
        return self.n_s * self.n_v

    def index(self, i, j):
        return np.asarray(j) * self.n_s + np.asarray(i)


@dataclass(frozen=True)
class SpatialSystem:
    """Assembled semi-discrete operator ``du/dt = L u + g(t)`` with payoff ``phi``.

    ``extension_u`` and ``extension_b`` map the unknown vector and the
    Dirichlet data to the values on the full node set (boundaries included),
    flattened with the s index running fastest.
    """

    L: sp.csr_matrix
    phi: np.ndarray
    grid: object
    params: ModelParams
    boundary_matrix: sp.csr_matrix
    dirichlet: Callable[[float], np.ndarray] = field(repr=False)
    time_dependent: bool
    extension_u: sp.csr_matrix = field(repr=False)
    extension_b: sp.csr_matrix = field(repr=False)

    @property
    def size(self) -> int:
        return self.L.shape[0]

    def g(self, t: float = 0.0) -> np.ndarray:
        return self.boundary_matrix @ self.dirichlet(t)

    def g_steps(self, n_t: int, tau: float) -> np.ndarray:
        """Boundary vectors g(t_n) for n = 1..n_t, shape ``(n_t, size)``."""
        if not self.time_dependent:
            return np.tile(self.g(0.0), (n_t, 1))
        return np.stack([self.g(n * tau) for n in range(1, n_t + 1)])

    def full_values(self, u: np.ndarray, t: float) -> np.ndarray:
        """Values on the full node set as an array shaped like the grid axes."""
        full = self.extension_u @ u + self.extension_b @ self.dirichlet(t)
        if isinstance(self.grid, Grid1D):
            return full
        return full.reshape(len(self.grid.full_v_axis), len(self.grid.full_s_axis))

    def value_at(self, u: np.ndarray, point, t: float) -> float:
        """Interpolated value of the grid function ``u`` at ``point``."""
        if isinstance(self.grid, Grid1D):
            return interpolate_value((self.grid.full_axis,), self.full_values(u, t), point)
        axes = (self.grid.full_s_axis, self.grid.full_v_axis)
        return interpolate_value(axes, self.full_values(u, t).T, point)


# ---------------------------------------------------------------------------
# payoffs
# ---------------------------------------------------------------------------

def build_payoff(params: ModelParams, grid) -> np.ndarray:
    """Payoff on the unknowns of ``grid`` (lexicographic order in 2D)."""
    kind = params.kind
    if kind is ModelKind.BLACK_SCHOLES_1D:
        if not isinstance(grid, Grid1D):
            raise ValueError("1D model needs a Grid1D")
        return np.maximum(params.K - grid.nodes, 0.0)
    if not isinstance(grid, Grid2D):
        raise ValueError(f"{kind.value} needs a Grid2D")
    S, V = np.meshgrid(grid.s_nodes, grid.v_nodes)
    if kind is ModelKind.SPREAD_2D:
        return np.maximum(params.K - (S - V), 0.0).ravel()
    return np.maximum(params.K - S, 0.0).ravel()


# ---------------------------------------------------------------------------
# stencils
# ---------------------------------------------------------------------------

@dataclass
class _Triplets:
    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)

    def add(self, r, c, v):
        r, c, v = np.broadcast_arrays(np.asarray(r), np.asarray(c), np.asarray(v, dtype=float))
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(v.ravel())

    def matrix(self, shape) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        return sp.csr_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=shape,
        )


def _axis_coefficients(diffusion, drift, h, stencil="hybrid", cross_axial=0.0):
    """Neighbour weights (minus, plus, centre) for ``diffusion*u'' + drift*u'``.

    ``cross_axial`` is the amount the mixed-derivative stencil removes from
    each axial neighbour.  Central differencing is used where both neighbour
    weights stay nonnegative, first-order upwinding otherwise.
    """
    D = diffusion / h**2 - cross_axial
    c_half = drift / (2.0 * h)
    minus_c, plus_c = D - c_half, D + c_half
    if stencil == "central":
        use_central = np.ones_like(D, dtype=bool)
    else:
        use_central = np.minimum(minus_c, plus_c) >= 0.0
    up = drift / h
    minus_u = D + np.where(drift < 0, -up, 0.0)
    plus_u = D + np.where(drift > 0, up, 0.0)
    minus = np.where(use_central, minus_c, minus_u)
    plus = np.where(use_central, plus_c, plus_u)
    centre = -(minus + plus)
    return minus, plus, centre


def _raw_stencil_2d(coef, grid: Grid2D, r: float, cross: str, full_shape):
    """Stencil rows (one per unknown) over the full node set."""
    nvf, nsf = full_shape
    i_off = 1
    j_off = 0 if grid.v_from_zero else 1
    I, J = np.meshgrid(np.arange(grid.n_s) + i_off, np.arange(grid.n_v) + j_off)
    I, J = I.ravel(), J.ravel()
    S = grid.h_s * I
    V = grid.h_v * J
    a_ss, a_vv, a_sv, b_s, b_v = coef(S, V)
    hs, hv = grid.h_s, grid.h_v
    row = np.arange(grid.size)

    def full(ii, jj):
        return jj * nsf + ii

    if cross == "seven_point":
        X = np.abs(a_sv) / (2.0 * hs * hv)
    else:
        X = np.zeros_like(a_sv)
    sm, sp_, sc = _axis_coefficients(a_ss, b_s, hs, cross_axial=X)
    vm, vp, vc = _axis_coefficients(a_vv, b_v, hv, cross_axial=X)

    trip = _Triplets()
    trip.add(row, full(I - 1, J), sm)
    trip.add(row, full(I + 1, J), sp_)
    # v = 0 rows never reach below the axis: their v-weights are one-sided
    trip.add(row, full(I, np.maximum(J - 1, 0)), np.where(J > 0, vm, 0.0))
    trip.add(row, full(I, J + 1), vp)
    centre = sc + vc - r
    if cross == "seven_point":
        pos = a_sv > 0
        neg = a_sv < 0
        corner = np.abs(a_sv) / (2.0 * hs * hv)
        # the axial weights already returned 2*X per axis to the centre
        centre = centre - 2.0 * corner
        trip.add(row[pos], full(I[pos] + 1, J[pos] + 1), corner[pos])
        trip.add(row[pos], full(I[pos] - 1, J[pos] - 1), corner[pos])
        trip.add(row[neg], full(I[neg] + 1, J[neg] - 1), corner[neg])
        trip.add(row[neg], full(I[neg] - 1, J[neg] + 1), corner[neg])
    elif cross == "four_point":
        w = a_sv / (4.0 * hs * hv)
        nz = a_sv != 0
        for di, dj, sgn in ((1, 1, 1), (-1, -1, 1), (1, -1, -1), (-1, 1, -1)):
            trip.add(row[nz], full(I[nz] + di, J[nz] + dj), sgn * w[nz])
    else:
        raise ValueError(f"unknown cross-derivative stencil {cross!r}")
    trip.add(row, full(I, J), centre)
    return trip.matrix((grid.size, nvf * nsf))


def _extension(n_full: int, unknown_full: np.ndarray, resolvers: dict, dirichlet_full: np.ndarray):
    """Affine maps full-node-values = E_u @ u + E_b @ d.

    ``resolvers`` maps a derived full-node index to a list of
    ``(full_index, weight)`` pairs it is a combination of.
    """
    pos_u = {int(f): k for k, f in enumerate(unknown_full)}
    pos_b = {int(f): k for k, f in enumerate(dirichlet_full)}
    cache: dict = {}

    def resolve(f):
        if f in cache:
            return cache[f]
        if f in pos_u:
            out = ({pos_u[f]: 1.0}, {})
        elif f in pos_b:
            out = ({}, {pos_b[f]: 1.0})
        else:
            cu, cb = {}, {}
            for g, w in resolvers[f]:
                gu, gb = resolve(g)
                for k, x in gu.items():
                    cu[k] = cu.get(k, 0.0) + w * x
                for k, x in gb.items():
                    cb[k] = cb.get(k, 0.0) + w * x
            out = (cu, cb)
        cache[f] = out
        return out

    tu, tb = _Triplets(), _Triplets()
    for f in range(n_full):
        cu, cb = resolve(f)
        for k, w in cu.items():
            tu.add(f, k, w)
        for k, w in cb.items():
            tb.add(f, k, w)
    return (tu.matrix((n_full, len(unknown_full))),
            tb.matrix((n_full, len(dirichlet_full))))


def _finish(raw, E_u, E_b, phi, grid, params, dirichlet, time_dependent) -> SpatialSystem:
    L = as_csr(raw @ E_u)
    G = as_csr(raw @ E_b)
    return SpatialSystem(
        L=L, phi=phi, grid=grid, params=params, boundary_matrix=G,
        dirichlet=dirichlet, time_dependent=time_dependent,
        extension_u=as_csr(E_u), extension_b=as_csr(E_b),
    )


# ---------------------------------------------------------------------------
# assemblers
# ---------------------------------------------------------------------------

def assemble_blackscholes_1d(params: ModelParams, grid: Grid1D, stencil: str = "hybrid") -> SpatialSystem:
    """Black-Scholes put: ``L = sigma^2 s^2/2 d_ss + r s d_s - r``.

    Dirichlet data ``u(0) = K`` and ``u(s_max) = 0``.
    """
    if params.kind is not ModelKind.BLACK_SCHOLES_1D:
        raise ValueError("expected a Black-Scholes 1D model")
    n = grid.n_s
    s = grid.nodes
    minus, plus, centre = _axis_coefficients(0.5 * params.sigma**2 * s**2, params.r * s,
                                             grid.h, stencil=stencil)
    rows = np.arange(n)
    trip = _Triplets()
    trip.add(rows, rows, minus)
    trip.add(rows, rows + 1, centre - params.r)
    trip.add(rows, rows + 2, plus)
    raw = trip.matrix((n, n + 2))
    dirichlet_full = np.array([0, n + 1])
    E_u, E_b = _extension(n + 2, np.arange(1, n + 1), {}, dirichlet_full)
    K = params.K
    return _finish(raw, E_u, E_b, build_payoff(params, grid), grid, params,
                   lambda t: np.array([K, 0.0]), False)


def assemble_spread_2d(params: ModelParams, grid: Grid2D, cross: str = "seven_point",
                       s0_boundary: str = "max") -> SpatialSystem:
    """Two-asset spread put with time-dependent Dirichlet data on all sides.

    ``s0_boundary="max"`` uses ``u(0, v, t) = max(K e^{-rt} + v, 0)``;
    ``"zero"`` imposes homogeneous data on that side instead.
    """
    if params.kind is not ModelKind.SPREAD_2D:
        raise ValueError("expected a spread model")
    if grid.v_from_zero:
        raise ValueError("spread model uses interior nodes on both axes")
    if s0_boundary not in ("max", "zero"):
        raise ValueError(f"unknown s=0 boundary rule {s0_boundary!r}")
    p = params

    def coef(S, V):
        return (0.5 * p.sigma1**2 * S**2, 0.5 * p.sigma2**2 * V**2,
                p.rho * p.sigma1 * p.sigma2 * S * V, p.r * S, p.r * V)

    s_ax, v_ax = grid.full_s_axis, grid.full_v_axis
    nsf, nvf = len(s_ax), len(v_ax)
    raw = _raw_stencil_2d(coef, grid, p.r, cross, (nvf, nsf))
    Jf, If = np.divmod(np.arange(nsf * nvf), nsf)
    on_bdry = (If == 0) | (If == nsf - 1) | (Jf == 0) | (Jf == nvf - 1)
    dirichlet_full = np.flatnonzero(on_bdry)
    unknown_full = np.flatnonzero(~on_bdry)
    E_u, E_b = _extension(nsf * nvf, unknown_full, {}, dirichlet_full)

    bs, bv = s_ax[If[dirichlet_full]], v_ax[Jf[dirichlet_full]]
    keep = np.ones_like(bs) if s0_boundary == "max" else (If[dirichlet_full] > 0).astype(float)

    def dirichlet(t):
        # max(K e^{-rt} - (s - v), 0) reproduces the data on all four sides
        return keep * np.maximum(p.K * math.exp(-p.r * t) - (bs - bv), 0.0)

    system = _finish(raw, E_u, E_b, build_payoff(p, grid), grid, p, dirichlet, True)
    _warn_if_not_z(system, "spread")
    return system


def assemble_heston_2d(params: ModelParams, grid: Grid2D, cross: str = "seven_point",
                       neumann_order: int = 2) -> SpatialSystem:
    """Heston put: Dirichlet ``u = K`` at s = 0, zero Neumann data at s_max and
    v_max, and the degenerate (first-order, upwinded) operator on v = 0."""
    if params.kind is not ModelKind.HESTON_2D:
        raise ValueError("expected a Heston model")
    if not grid.v_from_zero:
        raise ValueError("Heston grid must include the v = 0 line")
    p = params

    def coef(S, V):
        return (0.5 * V * S**2, 0.5 * p.sigma**2 * V, p.rho * p.sigma * S * V,
                p.r * S, p.kappa * (p.eta - V))

    s_ax, v_ax = grid.full_s_axis, grid.full_v_axis
    nsf, nvf = len(s_ax), len(v_ax)
    raw = _raw_stencil_2d(coef, grid, p.r, cross, (nvf, nsf))
    Jf, If = np.divmod(np.arange(nsf * nvf), nsf)
    dirichlet_full = np.flatnonzero(If == 0)
    unknown_full = np.flatnonzero((If > 0) & (If < nsf - 1) & (Jf < nvf - 1))

    def ghost_weights(n):
        # zero slope at the edge: second order (4u1 - u2)/3 or first order u1
        return ((1, 4.0 / 3.0), (2, -1.0 / 3.0)) if n == 2 else ((1, 1.0),)

    resolvers = {}
    for f in np.flatnonzero(((If == nsf - 1) | (Jf == nvf - 1)) & (If > 0)):
        i, j = int(If[f]), int(Jf[f])
        if j == nvf - 1:
            resolvers[int(f)] = [((j - k) * nsf + i, w) for k, w in ghost_weights(neumann_order)]
        else:
            resolvers[int(f)] = [(j * nsf + i - k, w) for k, w in ghost_weights(neumann_order)]
    E_u, E_b = _extension(nsf * nvf, unknown_full, resolvers, dirichlet_full)
    K = p.K
    n_d = len(dirichlet_full)
    system = _finish(raw, E_u, E_b, build_payoff(p, grid), grid, p,
                     lambda t: np.full(n_d, K), False)
    _warn_if_not_z(system, "heston")
    return system


def assemble(params: ModelParams, grid, **options) -> SpatialSystem:
    builders = {
        ModelKind.BLACK_SCHOLES_1D: assemble_blackscholes_1d,
        ModelKind.SPREAD_2D: assemble_spread_2d,
        ModelKind.HESTON_2D: assemble_heston_2d,
    }
    return builders[params.kind](params, grid, **options)


# ---------------------------------------------------------------------------
# diagnostics and interpolation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZCheckReport:
    passed: bool
    violations: list  # (row, col, value of -L) with value > 0

    def __bool__(self):
        return self.passed


def check_z_matrix(L, rtol: float = 1e-13) -> ZCheckReport:
    """Check that ``-L`` has no positive off-diagonal entry."""
    A = sp.coo_matrix(L)
    scale = np.max(np.abs(A.data)) if A.nnz else 0.0
    off = A.row != A.col
    bad = off & (-A.data > rtol * scale)
    violations = sorted(zip(A.row[bad].tolist(), A.col[bad].tolist(), (-A.data[bad]).tolist()))
    return ZCheckReport(passed=not violations, violations=violations)


def _warn_if_not_z(system: SpatialSystem, label: str):
    report = check_z_matrix(system.L)
    if not report.passed:
        log.warning("%s operator: -L is not a Z-matrix (%d positive off-diagonals); "
                    "policy iteration proceeds without the M-matrix guarantee",
                    label, len(report.violations))


def interpolate_value(axes, values: np.ndarray, point) -> float:
    """Multilinear interpolation of ``values`` (shaped by ``axes``) at ``point``."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if len(axes) != point.size or values.ndim != len(axes):
        raise ValueError("point dimension does not match the grid")
    weights = []
    for ax, x in zip(axes, point):
        if not ax[0] - 1e-12 <= x <= ax[-1] + 1e-12:
            raise ValueError(f"point {x} outside [{ax[0]}, {ax[-1]}]")
        k = int(np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2))
        w = (x - ax[k]) / (ax[k + 1] - ax[k])
        weights.append((k, min(max(w, 0.0), 1.0)))
    total = 0.0
    for corner in np.ndindex(*(2,) * len(axes)):
        idx, wt = [], 1.0
        for (k, w), c in zip(weights, corner):
            idx.append(k + c)
            wt *= w if c else 1.0 - w
        if wt:
            total += wt * values[tuple(idx)]
    return float(total)
