import numpy as np
import pytest

from affinestab.elliptic import apply
from affinestab.grid import ScalarField, inner_product, norm
from affinestab.problem import make_problem
from affinestab.solvers import (newton_state, reduced_objective, sensitivities, snapshot_at,
                                solve_adjoint, solve_state, switching)

from conftest import PRESET_NAMES, loglog_slope, random_field


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_state_residual_small(name, specs33, rng):
    spec = specs33[name]
    u = random_field(spec.grid, rng)
    st = newton_state(spec, u)
    d = spec.d(st.y)[0]
    res = apply(spec.operator, st.y).values + d - spec.beta.values * u.values
    assert np.max(np.abs(res)) <= 1e-9
    assert st.residual <= 1e-10 or st.iterations > 0


def test_linear_state_needs_one_newton_step(specs33, rng):
    spec = specs33["linear-tracking"]
    st = newton_state(spec, random_field(spec.grid, rng))
    assert st.iterations <= 2


def test_cubic_state_monotone_in_control(specs33):
    """Comparison principle: a larger control yields a larger state."""
    spec = specs33["cubic-monotone"]
    g = spec.grid
    y_lo = solve_state(spec, ScalarField.constant(g, -0.5))
    y_hi = solve_state(spec, ScalarField.constant(g, 0.5))
    assert np.all(y_hi.values >= y_lo.values - 1e-12)


@pytest.mark.parametrize("name", ["cubic-monotone", "bilinear-cost"])
def test_central_difference_gradient(name, specs33, rng):
    spec = specs33[name]
    g = spec.grid
    u = random_field(g, rng, -0.5, 0.5)
    v = random_field(g, rng)
    snap = snapshot_at(spec, u)
    exact = inner_product(snap.sigma, v)
    ts = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
    errs = [abs((reduced_objective(spec, u + t * v) - reduced_objective(spec, u - t * v)) / (2 * t) - exact)
            for t in ts]
    assert loglog_slope(ts, errs) >= 1.9


def test_linear_tracking_gradient_exact(specs33, rng):
    """The linear-quadratic reduced cost has an exact central difference."""
    spec = specs33["linear-tracking"]
    g = spec.grid
    u, v = random_field(g, rng), random_field(g, rng)
    snap = snapshot_at(spec, u)
    t = 0.1
    fd = (reduced_objective(spec, u + t * v) - reduced_objective(spec, u - t * v)) / (2 * t)
    assert fd == pytest.approx(inner_product(snap.sigma, v), rel=1e-9, abs=1e-12)


def test_adjoint_and_switching_consistency(specs33, rng):
    spec = specs33["bilinear-cost"]
    u = random_field(spec.grid, rng)
    snap = snapshot_at(spec, u)
    p = solve_adjoint(spec, u, snap.y)
    np.testing.assert_array_equal(p.values, snap.p.values)
    np.testing.assert_array_equal(switching(spec, snap.y, p).values, snap.sigma.values)
    assert snap.adjoint_residual < 1e-10


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_linearized_state_is_state_derivative(name, specs33, rng):
    spec = specs33[name]
    g = spec.grid
    u = random_field(g, rng, -0.5, 0.5)
    v = random_field(g, rng)
    snap = snapshot_at(spec, u)
    z = sensitivities(spec, snap, v).z
    t = 1e-6
    fd = (solve_state(spec, u + t * v) - solve_state(spec, u - t * v)) * (1 / (2 * t))
    assert norm(fd - z, "Linf") <= 1e-6 * max(1.0, norm(z, "Linf"))


def test_linearity_of_sensitivities(specs33, rng):
    spec = specs33["cubic-monotone"]
    g = spec.grid
    snap = snapshot_at(spec, random_field(g, rng, -0.5, 0.5))
    v1, v2 = random_field(g, rng), random_field(g, rng)
    s1, s2 = sensitivities(spec, snap, v1), sensitivities(spec, snap, v2)
    s12 = sensitivities(spec, snap, v1 * 2.0 + v2)
    for a, b, c in zip(s1, s2, s12):
        assert norm(c - (a * 2.0 + b), "Linf") <= 1e-10 * max(1.0, norm(c, "Linf"))
