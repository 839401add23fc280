import numpy as np
import pytest

from pint_american.all_at_once import AllAtOnceSystem
from pint_american.market_models import Grid1D, Grid2D, ModelParams, assemble


def toy_spatial(model: str, rng: np.random.Generator, small: bool = False):
    """A randomised small instance of one of the three models."""
    if model == "bs1d":
        params = ModelParams("bs1d", K=100.0, T=1.0, r=rng.uniform(0.01, 0.08),
                             sigma=rng.uniform(0.1, 0.5))
        n_s = int(rng.integers(3, 7 if small else 17))
        return assemble(params, Grid1D(300.0, n_s)), params.T
    if model == "spread2d":
        params = ModelParams("spread2d", K=25.0, T=0.5, r=rng.uniform(0.01, 0.05),
                             sigma1=rng.uniform(0.2, 0.4), sigma2=rng.uniform(0.2, 0.4),
                             rho=rng.uniform(-0.3, 0.3))
        n = 2 if small else int(rng.integers(2, 5))
        return assemble(params, Grid2D(60.0, 60.0, n, n)), params.T
    if model == "heston2d":
        params = ModelParams("heston2d", K=10.0, T=0.25, r=rng.uniform(0.01, 0.1),
                             sigma=rng.uniform(0.2, 0.6), rho=rng.uniform(-0.2, 0.2),
                             kappa=5.0, eta=0.16)
        n_s, n_v = (3, 2) if small else (int(rng.integers(3, 6)), int(rng.integers(2, 4)))
        return assemble(params, Grid2D(20.0, 1.0, n_s, n_v, v_from_zero=True)), params.T
    raise ValueError(model)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def bs_small():
    params = ModelParams("bs1d", K=100.0, T=1.0, r=0.03, sigma=0.15)
    return assemble(params, Grid1D(300.0, 6))


@pytest.fixture
def toy_system(bs_small):
    return AllAtOnceSystem.build(bs_small, 4, 1.0)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
