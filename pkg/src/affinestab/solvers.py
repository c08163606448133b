"""
State, adjoint and sensitivity solves.

All linear work goes through :class:`~affinestab.elliptic.ShiftedSystem` with
shift ``alpha = d_y(., y)``; since the assembled matrix is symmetric the
adjoint computed here is the exact discrete adjoint of the discrete state
equation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .elliptic import ShiftedSystem, apply
from .errors import NonconvergenceError
from .grid import ScalarField, as_field, check_same_grid, integrate
from .problem import ProblemSpec, hamiltonian_derivatives

log = logging.getLogger(__name__)

STATE_TOL = 1e-10
NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 30


@dataclass(eq=False)
class OptimalitySnapshot:
    """A triple ``(y, p, u)`` with its switching function and residuals."""

    u: ScalarField
    y: ScalarField
    p: ScalarField
    sigma: ScalarField
    state_residual: float = 0.0
    adjoint_residual: float = 0.0
    objective: float = float("nan")
    iterations: int = 0
    gap: float = 0.0
    gap_history: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.u.grid


class StateSolution(NamedTuple):
    y: ScalarField
    residual: float
    iterations: int
    history: list


def _state_residual(spec: ProblemSpec, y: ScalarField, forcing: np.ndarray) -> np.ndarray:
    d, _, _ = spec.d(y)
    return apply(spec.operator, y).values + d - forcing


def newton_state(spec: ProblemSpec, u: ScalarField, lift: Optional[ScalarField] = None,
                 y0: Optional[ScalarField] = None, tol: float = STATE_TOL,
                 max_iter: int = NEWTON_MAX_ITER) -> StateSolution:
    """Damped Newton for ``L y + d(., y) = beta u + lift``."""
    check_same_grid(u, spec.beta)
    g = spec.grid
    forcing = spec.beta.values * u.values
    if lift is not None:
        forcing = forcing + as_field(g, lift).values
    y = ScalarField.zeros(g) if y0 is None else y0
    R = _state_residual(spec, y, forcing)
    r = float(np.max(np.abs(R)))
    history = [r]
    op = spec.operator
    for it in range(1, max_iter + 1):
        if r <= tol:
            return StateSolution(y, r, it - 1, history)
        _, d_y, _ = spec.d(y)
        delta = ShiftedSystem(op, ScalarField(g, d_y)).solve(ScalarField(g, -R)).values
        theta = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            y_new = ScalarField(g, y.values + theta * delta)
            R_new = _state_residual(spec, y_new, forcing)
            r_new = float(np.max(np.abs(R_new)))
            if r_new < r or r_new <= tol:
                break
            theta *= 0.5
        step = theta * float(np.max(np.abs(delta)))
        y, R, r = y_new, R_new, r_new
        history.append(r)
        # residual stuck at the rounding level of the strong-form action
        if step <= 1e-14 * (1.0 + float(np.max(np.abs(y.values)))):
            return StateSolution(y, r, it, history)
    if r <= tol:
        return StateSolution(y, r, max_iter, history)
    raise NonconvergenceError(f"Newton did not converge in {max_iter} iterations "
                              f"(residual {r:.3e})", history=history, residual=r)


def solve_state(spec: ProblemSpec, u: ScalarField, lift: Optional[ScalarField] = None,
                y0: Optional[ScalarField] = None) -> ScalarField:
    """State ``y_u`` solving ``L y + d(., y) = beta u + lift``."""
    return newton_state(spec, u, lift, y0).y


class AdjointSolution(NamedTuple):
    p: ScalarField
    residual: float


def adjoint_solution(spec: ProblemSpec, u: ScalarField, y: ScalarField,
                     lift: Optional[ScalarField] = None) -> AdjointSolution:
    g = spec.grid
    _, d_y, _ = spec.d(y)
    _, w_y, _ = spec.w(y)
    _, s_y, _ = spec.s(y)
    rhs = w_y + s_y * u.values
    if lift is not None:
        rhs = rhs + as_field(g, lift).values
    system = ShiftedSystem(spec.operator, ScalarField(g, d_y))
    weighted = g.weights * rhs
    p = system.solve_weak(weighted)
    scale = max(float(np.max(np.abs(weighted))), np.finfo(float).tiny)
    res = float(np.max(np.abs(system.matrix @ p - weighted))) / scale
    return AdjointSolution(ScalarField(g, p), res if np.any(weighted) else 0.0)


def solve_adjoint(spec: ProblemSpec, u: ScalarField, y: ScalarField,
                  lift: Optional[ScalarField] = None) -> ScalarField:
    """Adjoint ``p`` solving ``L p + d_y(., y) p = w_y + s_y u + lift``."""
    return adjoint_solution(spec, u, y, lift).p


def switching(spec: ProblemSpec, y: ScalarField, p: ScalarField) -> ScalarField:
    """Switching function ``s(., y) + beta p``."""
    check_same_grid(y, p)
    s, _, _ = spec.s(y)
    return ScalarField(spec.grid, s + spec.beta.values * p.values)


def objective(spec: ProblemSpec, u: ScalarField, y: ScalarField) -> float:
    """Discrete cost ``int w(x, y) + s(x, y) u``."""
    w, _, _ = spec.w(y)
    s, _, _ = spec.s(y)
    return integrate(ScalarField(spec.grid, w + s * u.values))


def reduced_objective(spec: ProblemSpec, u: ScalarField) -> float:
    return objective(spec, u, solve_state(spec, u))


def snapshot_at(spec: ProblemSpec, u: ScalarField, *, state_lift=None, adjoint_lift=None,
                y0=None) -> OptimalitySnapshot:
    """Solve state and adjoint at ``u`` and assemble the snapshot."""
    st = newton_state(spec, u, state_lift, y0)
    adj = adjoint_solution(spec, u, st.y, adjoint_lift)
    return OptimalitySnapshot(u=u, y=st.y, p=adj.p, sigma=switching(spec, st.y, adj.p),
                              state_residual=st.residual, adjoint_residual=adj.residual,
                              objective=objective(spec, u, st.y))


# linearizations at a snapshot -------------------------------------------

def linearized_system(spec: ProblemSpec, snapshot: OptimalitySnapshot) -> ShiftedSystem:
    """Factorized ``L + d_y(., y)`` at the snapshot state (cached)."""
    key = ("linearized", id(spec))
    system = snapshot._cache.get(key)
    if system is None:
        _, d_y, _ = spec.d(snapshot.y)
        system = ShiftedSystem(spec.operator, ScalarField(spec.grid, d_y))
        snapshot._cache[key] = system
    return system


def _hamiltonian(spec, snapshot):
    key = ("hamiltonian", id(spec))
    H = snapshot._cache.get(key)
    if H is None:
        H = hamiltonian_derivatives(spec, snapshot.y, snapshot.p, snapshot.u)
        snapshot._cache[key] = H
    return H


def solve_linearized_state(spec: ProblemSpec, snapshot: OptimalitySnapshot,
                           v: ScalarField) -> ScalarField:
    """``z_v``: ``L z + d_y z = beta v``."""
    check_same_grid(v, snapshot.y)
    return linearized_system(spec, snapshot).solve(spec.beta * v)


def solve_linearized_adjoint(spec: ProblemSpec, snapshot: OptimalitySnapshot,
                             v: ScalarField, z_v: ScalarField) -> ScalarField:
    """``q_v``: ``L q + d_y q = H_yy z_v + H_yu v``."""
    check_same_grid(v, z_v, snapshot.y)
    H = _hamiltonian(spec, snapshot)
    return linearized_system(spec, snapshot).solve(H.H_yy * z_v + H.H_yu * v)


class Sensitivities(NamedTuple):
    z: ScalarField
    q: ScalarField
    pi: ScalarField


def sensitivities(spec: ProblemSpec, snapshot: OptimalitySnapshot, v: ScalarField) -> Sensitivities:
    z = solve_linearized_state(spec, snapshot, v)
    q = solve_linearized_adjoint(spec, snapshot, v, z)
    H = _hamiltonian(spec, snapshot)
    return Sensitivities(z, q, H.H_yu * z + H.H_up * q)


def pi_of(spec: ProblemSpec, snapshot: OptimalitySnapshot, v: ScalarField) -> ScalarField:
    """Linearized switching function ``pi_v = s_y z_v + beta q_v``."""
    return sensitivities(spec, snapshot, v).pi
