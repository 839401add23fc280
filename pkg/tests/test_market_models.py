import numpy as np
import pytest
import scipy.sparse as sp

from pint_american.market_models import (Grid1D, Grid2D, ModelParams, assemble,
                                         build_payoff, check_z_matrix, interpolate_value)

BS = ModelParams("bs1d", K=100.0, T=1.0, r=0.03, sigma=0.15)
SPREAD = ModelParams("spread2d", K=25.0, T=122 / 365, r=0.035, sigma1=0.35, sigma2=0.38,
                     rho=0.6)
HESTON = ModelParams("heston2d", K=10.0, T=0.25, r=0.1, sigma=0.9, rho=0.1, kappa=5.0,
                     eta=0.16)


def axis_weights(diff, drift, h, cross=0.0):
    """Independent per-node weights: central when both are nonnegative, else upwind."""
    D = diff / h**2 - cross
    m, p = D - drift / (2 * h), D + drift / (2 * h)
    if min(m, p) < 0:
        m = D + (-drift / h if drift < 0 else 0.0)
        p = D + (drift / h if drift > 0 else 0.0)
    return m, p


# --- payoff ---------------------------------------------------------------

def test_payoff_examples():
    grid = Grid1D(300.0, 1279)
    assert grid.h == pytest.approx(0.234375)
    phi = build_payoff(BS, grid)
    assert phi[0] == pytest.approx(99.765625)
    assert build_payoff(BS, Grid1D(300.0, 2))[0] == 0.0  # node s = 100 = K
    g2 = Grid2D(60.0, 60.0, 5, 5)
    phi2 = build_payoff(SPREAD, g2)
    assert phi2[g2.index(2, 0)] == pytest.approx(5.0)  # (s, v) = (30, 10)


def test_payoff_grid_kind_mismatch():
    with pytest.raises(ValueError):
        build_payoff(BS, Grid2D(1.0, 1.0, 3, 3))
    with pytest.raises(ValueError):
        build_payoff(SPREAD, Grid1D(1.0, 3))


# --- parameters and grids --------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    dict(kind="bs1d", K=-1.0, T=1.0, r=0.0, sigma=0.1),
    dict(kind="bs1d", K=1.0, T=1.0, r=0.0, sigma=-0.1),
    dict(kind="bs1d", K=1.0, T=1.0, r=-0.1, sigma=0.1),
    dict(kind="spread2d", K=1.0, T=1.0, r=0.0, sigma1=0.1),
    dict(kind="heston2d", K=1.0, T=1.0, r=0.0, sigma=0.1, kappa=0.0, eta=0.1),
    dict(kind="bs1d", K=1.0, T=1.0, r=0.0, sigma=0.1, rho=1.5),
    dict(kind="nonsense", K=1.0, T=1.0, r=0.0, sigma=0.1),
])
def test_invalid_params(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid1D(300.0, 1)
    with pytest.raises(ValueError):
        Grid1D(0.0, 5)
    with pytest.raises(ValueError):
        Grid2D(1.0, 1.0, 1, 4)


def test_grid2d_layout():
    g = Grid2D(20.0, 1.0, 4, 5, v_from_zero=True)
    assert g.h_v == pytest.approx(0.2)
    assert g.v_nodes[0] == 0.0 and len(g.v_nodes) == 5
    assert g.index(3, 2) == 11


# --- Black-Scholes -----------------------------------------------------------

def test_bs_zero_coefficients_vanish():
    params = ModelParams("bs1d", K=100.0, T=1.0, r=0.0, sigma=0.0)
    sys_ = assemble(params, Grid1D(300.0, 20))
    assert sys_.L.nnz == 0
    assert not sys_.g().any()


def test_bs_row_sums_interior():
    sys_ = assemble(BS, Grid1D(300.0, 1280))
    sums = np.asarray(sys_.L.sum(axis=1)).ravel()
    np.testing.assert_allclose(sums[1:-1], -0.03, rtol=0, atol=1e-9)


def test_bs_dense_stencil_oracle():
    grid = Grid1D(300.0, 40)
    sys_ = assemble(BS, grid)
    L = sys_.L.toarray()
    for i, s in enumerate(grid.nodes):
        m, p = axis_weights(0.5 * BS.sigma**2 * s**2, BS.r * s, grid.h)
        assert L[i, i] == pytest.approx(-(m + p) - BS.r, abs=1e-12)
        if i > 0:
            assert L[i, i - 1] == pytest.approx(m, abs=1e-12)
        if i < grid.n_s - 1:
            assert L[i, i + 1] == pytest.approx(p, abs=1e-12)
    m0, _ = axis_weights(0.5 * BS.sigma**2 * grid.h**2, BS.r * grid.h, grid.h)
    assert sys_.g()[0] == pytest.approx(m0 * BS.K)
    assert sys_.g()[-1] == 0.0


def test_bs_central_stencil_option():
    grid = Grid1D(300.0, 20)
    L = assemble(BS, grid, stencil="central").L.toarray()
    s = grid.nodes[0]
    D = 0.5 * BS.sigma**2 * s**2 / grid.h**2
    assert L[0, 1] == pytest.approx(D + BS.r * s / (2 * grid.h))


# --- spread ------------------------------------------------------------------

def test_spread_decouples_to_bs():
    params = ModelParams("spread2d", K=25.0, T=1.0, r=0.035, sigma1=0.35, sigma2=0.0, rho=0.0)
    g2 = Grid2D(300.0, 300.0, 12, 6)
    L2 = assemble(params, g2).L.toarray()
    L1 = assemble(ModelParams("bs1d", K=25.0, T=1.0, r=0.035, sigma=0.35),
                  Grid1D(300.0, 12)).L.toarray()
    for j in range(g2.n_v):
        rows = g2.index(np.arange(12), j)
        block = L2[np.ix_(rows, rows)]
        off = ~np.eye(12, dtype=bool)
        np.testing.assert_allclose(block[off], L1[off], atol=1e-12)


def test_spread_row_sums():
    g = Grid2D(300.0, 300.0, 64, 64)
    L = assemble(SPREAD, g).L
    sums = (L @ np.ones(g.size)).reshape(g.n_v, g.n_s)
    np.testing.assert_allclose(sums[2:-2, 2:-2], -SPREAD.r, rtol=0, atol=1e-9)


def test_spread_dense_loop_oracle_8x8():
    g = Grid2D(300.0, 300.0, 64, 64)
    L = assemble(SPREAD, g).L.tocsr()
    p = SPREAD
    for j in range(28, 36):
        for i in range(28, 36):
            s, v = g.s_nodes[i], g.v_nodes[j]
            a_sv = p.rho * p.sigma1 * p.sigma2 * s * v
            X = abs(a_sv) / (2 * g.h_s * g.h_v)
            sm, sp_ = axis_weights(0.5 * p.sigma1**2 * s**2, p.r * s, g.h_s, X)
            vm, vp = axis_weights(0.5 * p.sigma2**2 * v**2, p.r * v, g.h_v, X)
            expect = {(i - 1, j): sm, (i + 1, j): sp_, (i, j - 1): vm, (i, j + 1): vp,
                      (i, j): -(sm + sp_ + vm + vp) - p.r - 2 * X}
            if a_sv > 0:
                expect[(i + 1, j + 1)] = X
                expect[(i - 1, j - 1)] = X
            else:
                expect[(i + 1, j - 1)] = X
                expect[(i - 1, j + 1)] = X
            row = L.getrow(int(g.index(i, j))).toarray().ravel()
            dense = np.zeros(g.size)
            for (ii, jj), w in expect.items():
                dense[int(g.index(ii, jj))] += w
            np.testing.assert_allclose(row, dense, rtol=1e-13, atol=1e-12)


def test_spread_boundary_data_time_dependent():
    g = Grid2D(300.0, 300.0, 8, 8)
    sys_ = assemble(SPREAD, g)
    assert sys_.time_dependent
    assert not np.allclose(sys_.g(0.0), sys_.g(0.3))
    np.testing.assert_allclose(sys_.g_steps(3, 0.1)[1], sys_.g(0.2))


def test_spread_z_matrix():
    g = Grid2D(300.0, 300.0, 64, 64)
    seven = check_z_matrix(assemble(SPREAD, g).L)
    report = check_z_matrix(assemble(SPREAD, g, cross="four_point").L)
    assert not report.passed and report.violations
    # the one-signed stencil removes the cross terms' wrong-sign corners, but
    # with rho = 0.6 the axial weights still go negative far from the origin
    assert len(seven.violations) < len(report.violations)
    uncorrelated = ModelParams("spread2d", K=25.0, T=1.0, r=0.035, sigma1=0.35,
                               sigma2=0.38, rho=0.0)
    assert check_z_matrix(assemble(uncorrelated, g).L).passed
    r, c, val = report.violations[0]
    assert val > 0 and r != c


def test_spread_options_validated():
    g = Grid2D(300.0, 300.0, 8, 8)
    with pytest.raises(ValueError):
        assemble(SPREAD, g, cross="nine_point")
    with pytest.raises(ValueError):
        assemble(SPREAD, g, s0_boundary="other")
    with pytest.raises(ValueError):
        assemble(SPREAD, Grid2D(300.0, 300.0, 8, 8, v_from_zero=True))


# --- Heston ------------------------------------------------------------------

def test_heston_degenerate_v0_row():
    g = Grid2D(20.0, 1.0, 40, 20, v_from_zero=True)
    L = assemble(HESTON, g).L.tocsr()
    p = HESTON
    for i in (5, 10, 20):
        s = g.s_nodes[i]
        row = L.getrow(int(g.index(i, 0))).toarray().ravel()
        expect = np.zeros(g.size)
        expect[int(g.index(i + 1, 0))] = p.r * s / g.h_s
        expect[int(g.index(i, 1))] = p.kappa * p.eta / g.h_v
        expect[int(g.index(i, 0))] = -p.r * s / g.h_s - p.kappa * p.eta / g.h_v - p.r
        np.testing.assert_allclose(row, expect, atol=1e-12)


def test_heston_row_sums():
    g = Grid2D(20.0, 1.0, 40, 20, v_from_zero=True)
    L = assemble(HESTON, g).L
    sums = (L @ np.ones(g.size)).reshape(g.n_v, g.n_s)
    np.testing.assert_allclose(sums[:-2, 2:-2], -HESTON.r, rtol=0, atol=1e-9)


def test_heston_frozen_variance_is_bs():
    params = ModelParams("heston2d", K=10.0, T=0.25, r=0.1, sigma=0.0, rho=0.0, kappa=5.0,
                         eta=0.16)
    g = Grid2D(20.0, 1.0, 30, 25, v_from_zero=True)
    j = 4
    assert g.v_nodes[j] == pytest.approx(0.16)
    L = assemble(params, g).L.toarray()
    rows = g.index(np.arange(30), j)
    L1 = assemble(ModelParams("bs1d", K=10.0, T=0.25, r=0.1, sigma=0.4),
                  Grid1D(20.0, 30)).L.toarray()
    block = L[np.ix_(rows, rows)]
    np.testing.assert_allclose(block[:, :-1][:-1], L1[:-1, :-1], atol=1e-12)
    others = np.delete(np.arange(g.size), rows)
    assert not np.any(L[np.ix_(rows, others)])


def test_heston_grid_must_include_v0():
    with pytest.raises(ValueError):
        assemble(HESTON, Grid2D(20.0, 1.0, 8, 8))


def test_heston_neumann_first_order_option():
    g = Grid2D(20.0, 1.0, 8, 6, v_from_zero=True)
    L2 = assemble(HESTON, g).L
    L1 = assemble(HESTON, g, neumann_order=1).L
    assert (L1 - L2).count_nonzero() > 0
    np.testing.assert_allclose(L1 @ np.ones(g.size), L2 @ np.ones(g.size), atol=1e-9)


# --- diagnostics -------------------------------------------------------------

def test_z_check_examples():
    assert check_z_matrix(-sp.identity(5)).passed
    g = Grid1D(300.0, 128)
    rep = check_z_matrix(assemble(BS, g).L)
    assert rep.passed and rep.violations == []
    assert not check_z_matrix(sp.csr_matrix(np.array([[-1.0, -0.5], [0.0, -1.0]])))


def test_interpolation_examples():
    axis = np.array([0.0, 1.0, 2.0])
    assert interpolate_value((axis,), np.array([5.0, 7.0, 9.0]), 1.0) == 7.0
    assert interpolate_value((np.array([0.0, 1.0]),), np.array([1.0, 3.0]), 0.5) == 2.0
    ax = np.array([0.0, 1.0])
    vals = np.array([[0.0, 0.0], [4.0, 4.0]])
    assert interpolate_value((ax, ax), vals, (0.5, 0.5)) == 2.0
    with pytest.raises(ValueError):
        interpolate_value((axis,), np.zeros(3), 3.5)
    with pytest.raises(ValueError):
        interpolate_value((axis,), np.zeros(3), (1.0, 1.0))


def test_value_at_reproduces_nodes_and_boundary():
    g = Grid1D(300.0, 10)
    sys_ = assemble(BS, g)
    u = np.arange(10, dtype=float)
    assert sys_.value_at(u, g.nodes[3], 1.0) == pytest.approx(3.0)
    assert sys_.value_at(u, 0.0, 1.0) == pytest.approx(BS.K)
    g2 = Grid2D(20.0, 1.0, 6, 5, v_from_zero=True)
    sys2 = assemble(HESTON, g2)
    u2 = np.arange(g2.size, dtype=float)
    assert sys2.value_at(u2, (g2.s_nodes[2], g2.v_nodes[3]), 0.0) == pytest.approx(u2[g2.index(2, 3)])
