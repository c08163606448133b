import numpy as np
import pytest

from affinestab.grid import GridSpec, ScalarField
from affinestab.optimize import SolveOptions, solve_bangbang
from affinestab.problem import make_problem

PRESET_NAMES = ("linear-tracking", "cubic-monotone", "bilinear-cost")


@pytest.fixture(scope="session")
def grid33():
    return GridSpec.square(33)


@pytest.fixture(scope="session")
def specs33():
    return {name: make_problem(name, 33) for name in PRESET_NAMES}


@pytest.fixture(scope="session")
def optima33(specs33):
    opts = SolveOptions(gap_tol=1e-12, max_iters=2000)
    return {name: solve_bangbang(spec, opts) for name, spec in specs33.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(grid, rng, low=-1.0, high=1.0):
    return ScalarField(grid, rng.uniform(low, high, grid.size))


def loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# acceptance criteria register their outcome here; printed after the run
ACCEPTANCE: dict = {}


def record_criterion(number, title, ok, detail=""):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}: {detail}")
