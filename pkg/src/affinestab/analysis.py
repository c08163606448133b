"""
Second-order and structural quantities at a candidate optimum.

Includes the quadratic form (direct and dual evaluation), its polarization,
the cone split used to reduce coercivity to a thin band around the switching
set, the level-set exponent estimator and a sampled coercivity probe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import InsufficientDataError, PreconditionError
from .grid import ScalarField, check_same_grid, inner_product, integrate, measure_level_set, norm
from .problem import ProblemSpec
from .solvers import OptimalitySnapshot, _hamiltonian, pi_of, sensitivities, solve_linearized_state

# --------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class RateReport:
    """Least-squares fit ``y ~ constant * x**exponent`` in log-log scale."""

    xs: tuple
    ys: tuple
    exponent: float
    constant: float
    r_squared: float

    def predict(self, x):
        return self.constant * np.asarray(x, dtype=float) ** self.exponent


def fit_rate(xs: Sequence[float], ys: Sequence[float], min_points: int = 4) -> RateReport:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape:
        raise ValueError("xs and ys must have the same length")
    if len(xs) < min_points:
        raise InsufficientDataError(f"need at least {min_points} samples, got {len(xs)}")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("rate fit needs strictly positive samples")
    dx = np.diff(xs)
    if not (np.all(dx > 0) or np.all(dx < 0)):
        raise ValueError("xs must be strictly monotone")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateReport(tuple(xs.tolist()), tuple(ys.tolist()), float(slope),
                      float(np.exp(intercept)), r2)


# --------------------------------------------------------------------------
# quadratic and bilinear forms


def lambda_direct(spec: ProblemSpec, snapshot: OptimalitySnapshot, v: ScalarField) -> float:
    """``int H_yy z_v^2 + 2 H_uy z_v v``."""
    z = solve_linearized_state(spec, snapshot, v)
    H = _hamiltonian(spec, snapshot)
    return integrate(H.H_yy * z * z + 2.0 * H.H_yu * z * v)


def lambda_dual(spec: ProblemSpec, snapshot: OptimalitySnapshot, v: ScalarField) -> float:
    """``int pi_v v``."""
    return inner_product(pi_of(spec, snapshot, v), v)


def gamma_form(spec: ProblemSpec, snapshot: OptimalitySnapshot,
               v1: ScalarField, v2: ScalarField) -> float:
    """Symmetrized bilinear form ``(int pi_{v1} v2 + pi_{v2} v1) / 2``."""
    return 0.5 * (inner_product(pi_of(spec, snapshot, v1), v2)
                  + inner_product(pi_of(spec, snapshot, v2), v1))


# --------------------------------------------------------------------------
# cone split


class ConeSplit(NamedTuple):
    v1: ScalarField
    v2: ScalarField
    tau: float


def cone_split(snapshot: OptimalitySnapshot | ScalarField, v: ScalarField, tau: float) -> ConeSplit:
    """Split ``v`` into its part on ``{|sigma| <= tau}`` and the rest."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    sigma = snapshot.sigma if isinstance(snapshot, OptimalitySnapshot) else snapshot
    check_same_grid(sigma, v)
    band = np.abs(sigma.values) <= tau
    v1 = np.where(band, v.values, 0.0)
    return ConeSplit(v.with_values(v1), v.with_values(v.values - v1), tau)


# --------------------------------------------------------------------------
# structural assumption

FLOOR_FACTOR = 5.0


def _gradient_magnitude(sigma: ScalarField) -> np.ndarray:
    g = sigma.grid
    d1, d2 = np.gradient(sigma.as_array(), g.hx, g.hy)
    return np.hypot(d1, d2).ravel()


def resolution_floor(sigma: ScalarField, eps: float, factor: float = FLOOR_FACTOR) -> float:
    """Smallest resolvable level for the band ``{|sigma| <= eps}``.

    ``factor * h * median |grad sigma|`` over the band nodes: a band thinner
    than a few cells cannot be measured by nodal counting.
    """
    band = np.abs(sigma.values) <= eps
    if not np.any(band):
        return float("inf")
    return factor * sigma.grid.h * float(np.median(_gradient_magnitude(sigma)[band]))


def estimate_structural_exponent(sigma: ScalarField, eps_grid: Sequence[float],
                                 floor_factor: float = FLOOR_FACTOR) -> RateReport:
    """Fit ``meas{|sigma| <= eps} ~ mu0 * eps**(1/k)`` over ``eps_grid``.

    Samples with zero measure, with a band below the grid resolution floor,
    or with a saturated band (every node inside) are dropped.
    """
    eps = np.sort(np.asarray(eps_grid, dtype=float))
    if len(eps) == 0 or np.any(eps <= 0):
        raise PreconditionError("eps_grid must contain positive values")
    if len(eps) >= 2 and np.log10(eps[-1] / eps[0]) < 1.5:
        raise PreconditionError("eps_grid must span at least 1.5 decades")
    total = float(np.sum(sigma.grid.weights))
    xs, ys = [], []
    for e in eps:
        m = measure_level_set(sigma, e)
        if m <= 0.0 or m >= total * (1.0 - 1e-12):
            continue
        if e < resolution_floor(sigma, e, floor_factor):
            continue
        xs.append(e)
        ys.append(m)
    if len(xs) < 4:
        raise InsufficientDataError(
            f"only {len(xs)} resolvable level-set samples (zero-measure or sub-floor bands dropped)")
    return fit_rate(xs, ys)


class KStar(NamedTuple):
    k: int
    raw: float
    in_theory: bool


def k_star_from(report: RateReport) -> KStar:
    """Round the fitted ``1/exponent`` to the nearest of {1, 2, 3}.

    For a 2-D domain the theory covers ``k* in [1, 2)``; larger values are
    reported but flagged.
    """
    raw = 1.0 / report.exponent if report.exponent > 0 else float("inf")
    k = int(min((1, 2, 3), key=lambda c: abs(c - raw)))
    return KStar(k, raw, k < 2)


# --------------------------------------------------------------------------
# coercivity probe


@dataclass(frozen=True)
class CoercivityReport:
    min_ratio_linear: float
    min_ratio_quadratic: float
    k_star: int
    tau: float
    band_nodes: int
    n_samples: int
    verdict: str  # "coercive", "not coercive" or "vacuously coercive"

    @property
    def margin(self) -> float:
        return self.min_ratio_linear + self.min_ratio_quadratic

    @property
    def coercive(self) -> bool:
        return self.verdict != "not coercive"


def default_tau(sigma: ScalarField) -> float:
    return 0.1 * norm(sigma, "Linf")


def sample_cone_direction(spec: ProblemSpec, snapshot: OptimalitySnapshot, tau: float,
                          rng: np.random.Generator, atol: float = 1e-12) -> ScalarField:
    """Random ``v`` in ``(U - u) ∩ C^tau``.

    Each band node moves toward the opposite bound by a uniform fraction of
    the admissible extreme displacement; the band itself is a random
    sub-band ``|sigma| <= t * tau`` so that small directions are explored.
    """
    u, b1, b2 = snapshot.u.values, spec.b1.values, spec.b2.values
    sub_tau = tau * rng.uniform(0.05, 1.0)
    band = np.abs(snapshot.sigma.values) <= sub_tau
    at_lower = np.abs(u - b1) <= atol
    at_upper = np.abs(u - b2) <= atol
    extreme = np.where(at_lower, b2 - u, np.where(at_upper, b1 - u, 0.0))
    v = np.where(band, extreme * rng.uniform(0.0, 1.0, size=u.shape), 0.0)
    return ScalarField(spec.grid, v)


def coercivity_probe(spec: ProblemSpec, snapshot: OptimalitySnapshot, tau: Optional[float] = None,
                     n_samples: int = 100, k_star: Optional[int] = None, seed: int = 0,
                     eps_grid: Optional[Sequence[float]] = None) -> CoercivityReport:
    """Sampled lower bounds for ``int sigma v`` and ``Lambda(v)`` over the cone.

    Sampling gives necessary evidence only, it is not a certificate.
    """
    if n_samples < 100:
        raise PreconditionError("coercivity probe needs at least 100 samples")
    sigma = snapshot.sigma
    tau = default_tau(sigma) if tau is None else tau
    if not tau > 0:
        raise PreconditionError("tau must be positive")
    band_nodes = int(np.sum(np.abs(sigma.values) <= tau))
    if k_star is None:
        try:
            grid_eps = eps_grid if eps_grid is not None else default_eps_grid(sigma)
            k_star = k_star_from(estimate_structural_exponent(sigma, grid_eps)).k
        except InsufficientDataError:
            k_star = 1
    if band_nodes == 0:
        return CoercivityReport(float("inf"), float("inf"), k_star, tau, 0, 0, "vacuously coercive")
    rng = np.random.default_rng(seed)
    lin, quad = [], []
    for _ in range(n_samples):
        v = sample_cone_direction(spec, snapshot, tau, rng)
        size = norm(v, "L1")
        if size == 0.0:
            continue
        denom = size ** (k_star + 1)
        lin.append(inner_product(sigma, v) / denom)
        quad.append(inner_product(sensitivities(spec, snapshot, v).pi, v) / denom)
    if not lin:
        return CoercivityReport(float("inf"), float("inf"), k_star, tau, band_nodes, 0,
                                "vacuously coercive")
    mu1, mu2 = float(min(lin)), float(min(quad))
    verdict = "coercive" if mu1 + mu2 > 0 else "not coercive"
    return CoercivityReport(mu1, mu2, k_star, tau, band_nodes, len(lin), verdict)


def default_eps_grid(sigma: ScalarField, n: int = 40) -> np.ndarray:
    """Log-spaced levels from ``1e-4`` to ``0.5`` times ``max |sigma|``."""
    top = norm(sigma, "Linf")
    if top == 0.0:
        top = 1.0
    return np.geomspace(1e-4 * top, 0.5 * top, n)
