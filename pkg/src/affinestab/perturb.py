"""
Nonlinear perturbations and the compact-convergence metric.

A perturbation ``zeta = (xi, eta)`` shifts the state equation by ``xi(x, y)``
and the cost by ``eta(x, y, u)``. Distances between perturbations use the
series metric

    d_C(w1, w2) = sum_m 2^-m r_m / (1 + r_m),   r_m = sup_{K_m} |w1 - w2|,

truncated at ``m_max`` with the tail ``2^-m_max`` reported as uncertainty.
The spatial arguments range over the closed unit square (which lies in every
``K_m``); the remaining arguments range over ``[-m, m]``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import PreconditionError
from .grid import GridSpec

XiEval = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]
EtaEval = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], tuple]

M_MAX = 20
SAMPLES_PER_AXIS = 65
SPATIAL_SAMPLES = 9


def _zeros(*args):
    return np.zeros(np.broadcast(*args).shape)


def zero_xi(x1, x2, y):
    z = _zeros(x1, x2, y)
    return z, z, z


def zero_eta(x1, x2, y, u):
    z = _zeros(x1, x2, y, u)
    return z, z, z, z


@dataclass(frozen=True, eq=False)
class NonlinearPerturbation:
    """``xi_eval -> (xi, xi_y, xi_yy)`` and ``eta_eval -> (eta, eta_y, eta_u, eta_uu)``.

    ``minimizer(sigma, y, b1, b2, x1, x2)``, when given, returns the pointwise
    minimizer of ``sigma * w + eta(x, y, w)`` over ``[b1, b2]`` in closed form.
    """

    xi_eval: XiEval = zero_xi
    eta_eval: EtaEval = zero_eta
    label: str = "zero"
    minimizer: Optional[Callable] = None
    has_xi: bool = False
    has_eta: bool = False

    @property
    def is_zero(self) -> bool:
        return not (self.has_xi or self.has_eta)

    def xi(self, x1, x2, y):
        return self.xi_eval(x1, x2, y)[0]

    def xi_y(self, x1, x2, y):
        return self.xi_eval(x1, x2, y)[1]

    def eta_y(self, x1, x2, y, u):
        return self.eta_eval(x1, x2, y, u)[1]

    def eta_u(self, x1, x2, y, u):
        return self.eta_eval(x1, x2, y, u)[2]


ZERO = NonlinearPerturbation()


# presets -------------------------------------------------------------------

def tikhonov(eps: float) -> NonlinearPerturbation:
    """``eta = eps u^2 / 2``."""
    eps = float(eps)

    def eta(x1, x2, y, u):
        u = np.broadcast_to(np.asarray(u, dtype=float), np.broadcast(x1, x2, y, u).shape)
        z = np.zeros_like(u)
        return 0.5 * eps * u * u, z, eps * u, np.full_like(u, eps)

    def minimizer(sigma, y, b1, b2, x1, x2):
        return np.minimum(b2, np.maximum(b1, -sigma / eps))

    return NonlinearPerturbation(eta_eval=eta, label=f"tikhonov({eps:g})",
                                 minimizer=minimizer, has_eta=True)


def state_shift(c: float) -> NonlinearPerturbation:
    """``xi = c y``."""
    c = float(c)

    def xi(x1, x2, y):
        y = np.broadcast_to(np.asarray(y, dtype=float), np.broadcast(x1, x2, y).shape)
        return c * y, np.full_like(y, c), np.zeros_like(y)

    return NonlinearPerturbation(xi_eval=xi, label=f"state-shift({c:g})", has_xi=True)


def cost_tilt(c: float) -> NonlinearPerturbation:
    """``eta = c u``."""
    c = float(c)

    def eta(x1, x2, y, u):
        u = np.broadcast_to(np.asarray(u, dtype=float), np.broadcast(x1, x2, y, u).shape)
        z = np.zeros_like(u)
        return c * u, z, np.full_like(u, c), z

    return NonlinearPerturbation(eta_eval=eta, label=f"cost-tilt({c:g})", has_eta=True)


def smooth_bump(c: float, cx: float = 0.5, cy: float = 0.5, width: float = 0.2) -> NonlinearPerturbation:
    """Source term ``xi = c exp(-|x - center|^2 / width^2)`` (independent of ``y``)."""
    c, cx, cy, width = float(c), float(cx), float(cy), float(width)

    def xi(x1, x2, y):
        shape = np.broadcast(x1, x2, y).shape
        val = c * np.exp(-((x1 - cx) ** 2 + (x2 - cy) ** 2) / width ** 2)
        z = np.zeros(shape)
        return np.broadcast_to(val, shape) + z, z, z

    return NonlinearPerturbation(xi_eval=xi, label=f"smooth-bump({c:g},{cx:g},{cy:g},{width:g})",
                                 has_xi=True)


PERTURBATION_PRESETS = {
    "tikhonov": tikhonov,
    "state-shift": state_shift,
    "cost-tilt": cost_tilt,
    "smooth-bump": smooth_bump,
}

_CALL = re.compile(r"^\s*([a-z-]+)\s*\((.*)\)\s*$")


def parse_perturbation(text: str) -> NonlinearPerturbation:
    """Parse ``"name(arg, ...)"``, e.g. ``"tikhonov(1e-3)"``; ``"zero"`` is allowed."""
    if text.strip() == "zero":
        return ZERO
    m = _CALL.match(text)
    if not m or m.group(1) not in PERTURBATION_PRESETS:
        raise ValueError(f"cannot parse perturbation {text!r}; "
                         f"expected one of {sorted(PERTURBATION_PRESETS)} with arguments")
    args = [float(a) for a in m.group(2).split(",") if a.strip()]
    return PERTURBATION_PRESETS[m.group(1)](*args)


def family(name: str, magnitude: float, **kwargs) -> NonlinearPerturbation:
    """Member of a named preset family scaled by ``magnitude``."""
    try:
        return PERTURBATION_PRESETS[name](magnitude, **kwargs)
    except KeyError:
        raise ValueError(f"unknown perturbation family {name!r}") from None


# membership guards --------------------------------------------------------

def check_state_monotone(grid: GridSpec, d_eval, zeta: NonlinearPerturbation,
                         y_bound: float = 10.0, samples: int = 41) -> None:
    """Raise unless ``d_y + xi_y >= 0`` on nodes x [-y_bound, y_bound]."""
    x1, x2 = grid.coordinates
    ys = np.linspace(-y_bound, y_bound, samples)
    X1, X2, Y = x1[:, None], x2[:, None], ys[None, :]
    total = np.broadcast_to(d_eval(X1, X2, Y)[1] + zeta.xi_eval(X1, X2, Y)[1], (grid.size, samples))
    if np.min(total) < 0.0:
        k, j = np.unravel_index(np.argmin(total), total.shape)
        raise PreconditionError(
            f"monotonicity guard violated for {zeta.label}: d_y + xi_y = {total[k, j]:.3g} "
            f"at x = ({x1[k]:.4g}, {x2[k]:.4g}), y = {ys[j]:.4g}")


def eta_convexity(zeta: NonlinearPerturbation, grid: GridSpec, bound: float = 10.0,
                  samples: int = 21) -> float:
    """Minimum sampled ``eta_uu``; negative means ``eta`` is not convex in ``u``."""
    x1, x2 = grid.coordinates
    pts = np.linspace(-bound, bound, samples)
    _, _, _, e_uu = zeta.eta_eval(x1[:, None, None], x2[:, None, None], pts[None, :, None], pts[None, None, :])
    return float(np.min(e_uu))


def check_upsilon(grid: GridSpec, d_eval, zeta: NonlinearPerturbation) -> None:
    check_state_monotone(grid, d_eval, zeta)
    worst = eta_convexity(zeta, grid)
    if worst < 0.0:
        raise PreconditionError(f"{zeta.label}: eta is not convex in u (eta_uu = {worst:.3g})")


# metric ---------------------------------------------------------------------

class DCValue(NamedTuple):
    """Truncated series value plus an uncertainty bound.

    ``uncertainty`` is the truncation tail ``2^-m_max`` plus the lattice
    refinement gap (fine minus coarse lattice estimate), a proxy for how much
    the sampled sup underestimates the true one.
    """

    value: float
    uncertainty: float

    def __add__(self, other):
        return DCValue(self.value + other.value, self.uncertainty + other.uncertainty)


def _lattice(m: int, dims: int, spatial_dims: int, samples: int, spatial_samples: int):
    axes = []
    for a in range(dims):
        if a < spatial_dims:
            axes.append(np.linspace(0.0, 1.0, spatial_samples))
        else:
            axes.append(np.linspace(-m, m, samples))
    return np.meshgrid(*axes, indexing="ij", sparse=True)


def dc_metric(omega1: Callable, omega2: Callable, dims: int, m_max: int = M_MAX,
              samples_per_axis: int = SAMPLES_PER_AXIS, *, spatial_dims: int = 0,
              spatial_samples: int = SPATIAL_SAMPLES) -> DCValue:
    """Truncated compact-convergence distance between two evaluators.

    ``omega(*coords)`` receives ``dims`` broadcastable coordinate arrays; the
    first ``spatial_dims`` of them range over [0, 1], the rest over [-m, m].
    """
    if m_max < 8:
        raise PreconditionError("m_max must be at least 8")
    if samples_per_axis < 33:
        raise PreconditionError("need at least 33 samples per axis")
    value = 0.0
    lattice_gap = 0.0
    coarse = tuple(slice(None, None, 2) for _ in range(dims))
    for m in range(1, m_max + 1):
        coords = _lattice(m, dims, spatial_dims, samples_per_axis, spatial_samples)
        diff = np.abs(np.asarray(omega1(*coords), dtype=float) - np.asarray(omega2(*coords), dtype=float))
        diff = np.broadcast_to(diff, np.broadcast(*coords).shape)
        r = float(np.max(diff))
        r_coarse = float(np.max(diff[coarse]))
        term = r / (1.0 + r) if math.isfinite(r) else 1.0
        value += term / 2.0 ** m
        lattice_gap += (term - r_coarse / (1.0 + r_coarse)) / 2.0 ** m
    return DCValue(value, 2.0 ** -m_max + lattice_gap)


def _component(zeta: NonlinearPerturbation, which: str) -> Callable:
    if which == "xi":
        return lambda x1, x2, y: zeta.xi_eval(x1, x2, y)[0]
    if which == "xi_y":
        return lambda x1, x2, y: zeta.xi_eval(x1, x2, y)[1]
    if which == "eta_y":
        return lambda x1, x2, y, u: zeta.eta_eval(x1, x2, y, u)[1]
    if which == "eta_u":
        return lambda x1, x2, y, u: zeta.eta_eval(x1, x2, y, u)[2]
    raise ValueError(which)


def d_upsilon(zeta: NonlinearPerturbation, zeta_ref: NonlinearPerturbation = ZERO,
              m_max: int = M_MAX, samples: int = SAMPLES_PER_AXIS,
              spatial_samples: int = SPATIAL_SAMPLES) -> DCValue:
    """``d_C(xi) + d_C(xi_y) + d_C(eta_y) + d_C(eta_u)`` between two perturbations."""
    total = DCValue(0.0, 0.0)
    for which, dims in (("xi", 3), ("xi_y", 3), ("eta_y", 4), ("eta_u", 4)):
        total = total + dc_metric(_component(zeta, which), _component(zeta_ref, which), dims,
                                  m_max, samples, spatial_dims=2, spatial_samples=spatial_samples)
    return total


def metlem_constant(K_bound: float) -> int:
    """Smallest ``m`` with the ball of radius ``K_bound`` inside ``K_m``."""
    if not K_bound > 0:
        raise ValueError("K_bound must be positive")
    return max(1, math.ceil(K_bound))
