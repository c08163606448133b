import numpy as np
import pytest

from affinestab.errors import PreconditionError
from affinestab.grid import GridSpec
from affinestab.perturb import (ZERO, cost_tilt, d_upsilon, dc_metric, eta_convexity, family,
                                metlem_constant, parse_perturbation, check_state_monotone,
                                check_upsilon, smooth_bump, state_shift, tikhonov)
from affinestab.problem import make_problem

# Frozen with mpmath (50 digits) from sum_{m=1}^{20} 2^-m r_m / (1 + r_m):
# r_m = eps m^2 / 2 for eta = eps u^2 / 2, r_m = eps m for eta_u = eps u.
DC_TIKHONOV = {0.1: 0.17121074190763402, 0.01: 0.027036340075328753}
DC_TIKHONOV_DERIV = {0.1: 0.15699739517233029, 0.01: 0.019424427811625508}


def _eta(z):
    return lambda x1, x2, y, u: z.eta_eval(x1, x2, y, u)[0]


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_dc_of_tikhonov_matches_frozen_oracle(eps):
    val = dc_metric(_eta(tikhonov(eps)), _eta(ZERO), 4, spatial_dims=2)
    assert val.value == pytest.approx(DC_TIKHONOV[eps], rel=1e-13)
    assert val.value <= 3 * eps + val.uncertainty


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_d_upsilon_of_tikhonov_matches_frozen_oracle(eps):
    val = d_upsilon(tikhonov(eps))
    assert val.value == pytest.approx(DC_TIKHONOV_DERIV[eps], rel=1e-13)
    assert val.value <= 2 * eps + val.uncertainty


def test_dc_metric_axioms():
    f = lambda y: np.sin(y)
    g = lambda y: 0.5 * y
    h = lambda y: np.zeros_like(y)
    d = lambda a, b: dc_metric(a, b, 1).value
    assert d(f, f) == 0.0
    assert d(f, g) == pytest.approx(d(g, f))
    assert d(f, h) <= d(f, g) + d(g, h) + 1e-15
    assert d(f, g) < 1.0


def test_dc_metric_constant_difference_closed_form():
    c = 0.25
    val = dc_metric(lambda y: np.full_like(y, c), lambda y: np.zeros_like(y), 1)
    expected = (c / (1 + c)) * (1 - 2.0 ** -20)
    assert val.value == pytest.approx(expected, rel=1e-14)
    assert val.uncertainty == pytest.approx(2.0 ** -20)


def test_dc_metric_preconditions():
    z = lambda y: np.zeros_like(y)
    with pytest.raises(PreconditionError):
        dc_metric(z, z, 1, m_max=5)
    with pytest.raises(PreconditionError):
        dc_metric(z, z, 1, samples_per_axis=9)


def test_d_upsilon_zero_and_linear_families():
    assert d_upsilon(ZERO).value == 0.0
    # xi = c y: d_C(c y) + d_C(c); eta = c u: d_C(c) only
    c = 0.01
    m = np.arange(1, 21)
    dc = lambda r: float(np.sum(2.0 ** -m * r / (1 + r)))
    assert d_upsilon(state_shift(c)).value == pytest.approx(dc(c * m) + dc(c + 0 * m), rel=1e-12)
    assert d_upsilon(cost_tilt(c)).value == pytest.approx(dc(c + 0 * m), rel=1e-12)


def test_perturbation_derivatives_consistent():
    x1 = np.array([0.2, 0.7])
    x2 = np.array([0.4, 0.1])
    y = np.array([0.3, -0.8])
    u = np.array([-0.5, 0.9])
    h = 1e-6
    for z in (tikhonov(0.3), state_shift(0.2), cost_tilt(0.1), smooth_bump(0.5)):
        xi, xi_y, xi_yy = z.xi_eval(x1, x2, y)
        np.testing.assert_allclose((z.xi(x1, x2, y + h) - z.xi(x1, x2, y - h)) / (2 * h), xi_y, atol=1e-8)
        eta, eta_y, eta_u, eta_uu = z.eta_eval(x1, x2, y, u)
        e = lambda yy, uu: z.eta_eval(x1, x2, yy, uu)[0]
        np.testing.assert_allclose((e(y, u + h) - e(y, u - h)) / (2 * h), eta_u, atol=1e-8)
        np.testing.assert_allclose((e(y + h, u) - e(y - h, u)) / (2 * h), eta_y, atol=1e-8)


def test_tikhonov_minimizer_is_clamped_argmin():
    z = tikhonov(0.5)
    sigma = np.array([-1.0, -0.1, 0.0, 0.2, 3.0])
    b = np.ones(5)
    got = z.minimizer(sigma, None, -b, b, None, None)
    grid_u = np.linspace(-1, 1, 200001)
    brute = [grid_u[np.argmin(s * grid_u + 0.25 * grid_u ** 2)] for s in sigma]
    np.testing.assert_allclose(got, brute, atol=1e-5)


def test_parse_and_family():
    assert parse_perturbation("zero") is ZERO
    z = parse_perturbation("tikhonov(1e-3)")
    assert z.label == "tikhonov(0.001)" and z.has_eta and not z.has_xi
    assert parse_perturbation(" smooth-bump(0.1, 0.3, 0.3, 0.1) ").has_xi
    assert family("state-shift", 0.2).label == "state-shift(0.2)"
    with pytest.raises(ValueError):
        parse_perturbation("bogus(1)")
    with pytest.raises(ValueError):
        family("bogus", 1.0)


def test_monotone_guard_names_location():
    spec = make_problem("linear-tracking", 9)
    check_state_monotone(spec.grid, spec.d_eval, state_shift(0.5))
    with pytest.raises(PreconditionError, match=r"x = \("):
        check_state_monotone(spec.grid, spec.d_eval, state_shift(-0.5))
    # cubic d has d_y >= 1, which absorbs xi_y = -0.5
    cubic = make_problem("cubic-monotone", 9)
    check_state_monotone(cubic.grid, cubic.d_eval, state_shift(-0.5))


def test_convexity_guard():
    g = GridSpec.square(5)
    spec = make_problem("linear-tracking", g)
    assert eta_convexity(tikhonov(0.2), g) == pytest.approx(0.2)
    with pytest.raises(PreconditionError, match="not convex"):
        check_upsilon(g, spec.d_eval, tikhonov(-0.2))


def test_metlem_constant():
    assert metlem_constant(0.3) == 1
    assert metlem_constant(2.0) == 2
    assert metlem_constant(2.1) == 3
    with pytest.raises(ValueError):
        metlem_constant(0.0)
