"""
Control problem instances: coefficients, admissible set and Hamiltonian.

A problem is

    min  int w(x, y) + s(x, y) u dx
    s.t. L y + d(x, y) = beta u,   b1 <= u <= b2,

with ``L`` the Robin diffusion operator. Nonlinear coefficients are given as
pointwise evaluators ``(x1, x2, y) -> (value, d/dy, d2/dy2)`` acting on
broadcastable numpy arrays.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .elliptic import EllipticOperator, assemble
from .errors import PreconditionError
from .grid import GridSpec, ScalarField, as_field, check_same_grid

Evaluator = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    grid: GridSpec
    a_field: ScalarField
    b_boundary: ScalarField
    beta: ScalarField
    b1: ScalarField
    b2: ScalarField
    d_eval: Evaluator
    w_eval: Evaluator
    s_eval: Evaluator
    name: str = "custom"
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        check_same_grid(self.a_field, self.b_boundary, self.beta, self.b1, self.b2)
        if np.any(self.b1.values > self.b2.values):
            raise PreconditionError("control bounds must satisfy b1 <= b2 at every node")

    @cached_property
    def operator(self) -> EllipticOperator:
        return assemble(self.grid, self.a_field, self.b_boundary)

    def _at_nodes(self, ev: Evaluator, y: ScalarField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x1, x2 = self.grid.coordinates
        out = ev(x1, x2, y.values)
        return tuple(np.broadcast_to(np.asarray(o, dtype=float), (self.grid.size,)) for o in out)

    def d(self, y: ScalarField):
        return self._at_nodes(self.d_eval, y)

    def w(self, y: ScalarField):
        return self._at_nodes(self.w_eval, y)

    def s(self, y: ScalarField):
        return self._at_nodes(self.s_eval, y)

    def with_state_shift(self, xi_eval: Evaluator, label: str = "shifted") -> "ProblemSpec":
        """Same problem with ``d`` replaced by ``d + xi``."""
        d_eval = self.d_eval

        def shifted(x1, x2, y):
            d, dy, dyy = d_eval(x1, x2, y)
            xi, xy, xyy = xi_eval(x1, x2, y)
            return d + xi, dy + xy, dyy + xyy

        return dataclasses.replace(self, d_eval=shifted, name=f"{self.name}+{label}")

    def check_monotone(self, y_bound: float = 10.0, samples: int = 41) -> None:
        """Raise if ``d_y < 0`` somewhere on nodes x [-y_bound, y_bound]."""
        check_monotone(self.grid, self.d_eval, y_bound, samples)


def check_monotone(grid: GridSpec, d_eval: Evaluator, y_bound: float = 10.0, samples: int = 41) -> None:
    x1, x2 = grid.coordinates
    ys = np.linspace(-y_bound, y_bound, samples)
    _, dy, _ = d_eval(x1[:, None], x2[:, None], ys[None, :])
    dy = np.broadcast_to(dy, (grid.size, samples))
    if np.min(dy) < 0.0:
        k, m = np.unravel_index(np.argmin(dy), dy.shape)
        raise PreconditionError(
            f"d_y = {dy[k, m]:.3g} < 0 at x = ({x1[k]:.4g}, {x2[k]:.4g}), y = {ys[m]:.4g}")


# admissible set ----------------------------------------------------------

def project_admissible(v: ScalarField, spec: ProblemSpec) -> ScalarField:
    """Pointwise clamp of ``v`` onto ``[b1, b2]``."""
    check_same_grid(v, spec.b1)
    return ScalarField(spec.grid, np.minimum(spec.b2.values, np.maximum(spec.b1.values, v.values)))


def is_admissible(u: ScalarField, spec: ProblemSpec, tol: float = 0.0) -> bool:
    return bool(np.all(u.values >= spec.b1.values - tol) and np.all(u.values <= spec.b2.values + tol))


class HamiltonianDerivatives(NamedTuple):
    H_y: ScalarField
    H_u: ScalarField
    H_yy: ScalarField
    H_yu: ScalarField
    H_yp: ScalarField
    H_up: ScalarField


def hamiltonian_derivatives(spec: ProblemSpec, y: ScalarField, p: ScalarField,
                            u: ScalarField) -> HamiltonianDerivatives:
    """Nodal derivatives of ``H = w + s u + p (beta u - d)``."""
    check_same_grid(y, p, u, spec.beta)
    g = spec.grid
    d, d_y, d_yy = spec.d(y)
    _, w_y, w_yy = spec.w(y)
    s, s_y, s_yy = spec.s(y)
    P, U, B = p.values, u.values, spec.beta.values
    F = lambda a: ScalarField(g, a)
    return HamiltonianDerivatives(
        H_y=F(w_y + s_y * U - P * d_y),
        H_u=F(s + B * P),
        H_yy=F(w_yy + s_yy * U - P * d_yy),
        H_yu=F(s_y),
        H_yp=F(-d_y),
        H_up=F(B),
    )


def hamiltonian(spec: ProblemSpec, y: ScalarField, p: ScalarField, u: ScalarField) -> ScalarField:
    d, _, _ = spec.d(y)
    w, _, _ = spec.w(y)
    s, _, _ = spec.s(y)
    return ScalarField(spec.grid, w + s * u.values + p.values * (spec.beta.values * u.values - d))


# presets -----------------------------------------------------------------

def spatial_function(value, grid: GridSpec) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Turn a constant, callable or nodal field into ``f(x1, x2)``."""
    if callable(value):
        return value
    if isinstance(value, ScalarField):
        interp = RegularGridInterpolator((grid.x1_axis, grid.x2_axis), value.as_array())

        def f(x1, x2):
            x1, x2 = np.broadcast_arrays(x1, x2)
            pts = np.stack([np.clip(x1, 0, 1).ravel(), np.clip(x2, 0, 1).ravel()], axis=1)
            return interp(pts).reshape(x1.shape)

        return f
    c = float(value)
    return lambda x1, x2: np.full(np.broadcast(x1, x2).shape, c)


def _switching_offset(gamma, radius, cx, cy):
    def s0(x1, x2):
        return gamma * (np.hypot(x1 - cx, x2 - cy) - radius)
    return s0


def _default_target(amplitude):
    return lambda x1, x2: amplitude * np.sin(np.pi * x1) * np.sin(np.pi * x2)


def _tracking(y_d):
    def w(x1, x2, y):
        r = y - y_d(x1, x2)
        return 0.5 * r * r, r, np.ones_like(r)
    return w


def _zero(x1, x2, y):
    z = np.zeros(np.broadcast(x1, x2, y).shape)
    return z, z, z


def _linear_d(x1, x2, y):
    y = np.asarray(y, dtype=float)
    return y + 0.0 * x1, np.ones(np.broadcast(x1, y).shape), np.zeros(np.broadcast(x1, y).shape)


def _cubic_d(x1, x2, y):
    y = np.broadcast_to(np.asarray(y, dtype=float), np.broadcast(x1, y).shape)
    return y ** 3 + y, 3.0 * y ** 2 + 1.0, 6.0 * y


# The default switching circle is placed off the lattice symmetry axes so
# that grid nodes enter the band {|sigma| <= eps} gradually as eps shrinks.
PRESET_DEFAULTS = {
    "gamma": 0.5,
    "radius": 0.3391,
    "cx": 0.4813,
    "cy": 0.4929,
    "yd": 0.2,
    "beta": 1.0,
    "lower": -1.0,
    "upper": 1.0,
    "diffusion": 1.0,
    "robin": 1.0,
}


def _base(grid, params):
    p = dict(PRESET_DEFAULTS)
    unknown = set(params) - set(PRESET_DEFAULTS) - {"y_d", "s0"}
    if unknown:
        raise ValueError(f"unknown preset parameters: {sorted(unknown)}")
    p.update(params)
    y_d = spatial_function(p["y_d"], grid) if "y_d" in p else _default_target(p["yd"])
    s0 = spatial_function(p["s0"], grid) if "s0" in p else _switching_offset(
        p["gamma"], p["radius"], p["cx"], p["cy"])
    fields = dict(
        grid=grid,
        a_field=as_field(grid, p["diffusion"]),
        b_boundary=as_field(grid, p["robin"]),
        beta=as_field(grid, p["beta"]),
        b1=as_field(grid, p["lower"]),
        b2=as_field(grid, p["upper"]),
    )
    return p, y_d, s0, fields


def _linear_tracking(grid, **params):
    p, y_d, s0, fields = _base(grid, params)

    def s(x1, x2, y):
        v = s0(x1, x2) + 0.0 * y
        return v, np.zeros_like(v), np.zeros_like(v)

    return ProblemSpec(d_eval=_zero, w_eval=_tracking(y_d), s_eval=s,
                       name="linear-tracking", params=p, **fields)


def _cubic_monotone(grid, **params):
    p, y_d, s0, fields = _base(grid, params)

    def s(x1, x2, y):
        v = s0(x1, x2) + 0.0 * y
        return v, np.zeros_like(v), np.zeros_like(v)

    return ProblemSpec(d_eval=_cubic_d, w_eval=_tracking(y_d), s_eval=s,
                       name="cubic-monotone", params=p, **fields)


def _bilinear_cost(grid, **params):
    p, y_d, s0, fields = _base(grid, params)

    def s(x1, x2, y):
        c = s0(x1, x2)
        return c * (1.0 + y * y), 2.0 * c * y, 2.0 * c + 0.0 * y

    return ProblemSpec(d_eval=_linear_d, w_eval=_tracking(y_d), s_eval=s,
                       name="bilinear-cost", params=p, **fields)


PRESETS: dict[str, Callable[..., ProblemSpec]] = {
    "linear-tracking": _linear_tracking,
    "cubic-monotone": _cubic_monotone,
    "bilinear-cost": _bilinear_cost,
}


def make_problem(name: str, grid: GridSpec | int, **params) -> ProblemSpec:
    """Build a named preset on ``grid`` (an int means an n x n grid)."""
    if isinstance(grid, int):
        grid = GridSpec.square(grid)
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
    spec = factory(grid, **params)
    spec.check_monotone()
    return spec
