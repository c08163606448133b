"""
Stationary points of the bang-bang problem and of its perturbations.

Every solver here runs the same descent loop on a reduced objective. What
changes between them is the pointwise model minimized at each iterate:

* a vertex rule (conditional gradient) when the control enters linearly,
* a strictly convex pointwise minimization when the cost carries a term
  convex in ``u`` (Tikhonov and its nonlinear generalizations).

The step length is chosen by Armijo backtracking on the objective. When the
first trial is rejected, a quadratic-interpolation step is tried as well.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConsistencyError, NonconvergenceError, PreconditionError
from .grid import GridSpec, ScalarField, as_field, check_same_grid, inner_product, integrate, norm
from .perturb import ZERO, NonlinearPerturbation, check_state_monotone, eta_convexity, tikhonov
from .problem import ProblemSpec
from .solvers import OptimalitySnapshot, adjoint_solution, newton_state, objective, switching

log = logging.getLogger(__name__)

TIE_TOL = 1e-12
ARMIJO_C = 1e-4
MAX_HALVINGS = 40
GAP_FLOOR = -1e-12
ROUNDING_SLOPE = 1e-14
POLISH_NODES = 8
DAMPING_RULES = ("armijo", "armijo-plain", "full")


@dataclass(frozen=True)
class SolveOptions:
    """``damping``: ``"armijo"`` (backtracking plus an interpolated trial),
    ``"armijo-plain"`` (halving only) or ``"full"`` (always ``theta = 1``)."""

    max_iters: int = 500
    gap_tol: float = 1e-10
    damping: str = "armijo"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if self.damping not in DAMPING_RULES:
            raise ValueError(f"unknown damping rule {self.damping!r}; use one of {DAMPING_RULES}")


@dataclass(frozen=True)
class PerturbationTriple:
    """Linear perturbation: state shift ``xi``, adjoint shift ``eta``, inclusion shift ``rho``."""

    xi: ScalarField
    eta: ScalarField
    rho: ScalarField

    def __post_init__(self):
        check_same_grid(self.xi, self.eta, self.rho)

    @classmethod
    def zero(cls, grid: GridSpec) -> "PerturbationTriple":
        z = ScalarField.zeros(grid)
        return cls(z, z, z)

    @classmethod
    def build(cls, grid: GridSpec, xi=0.0, eta=0.0, rho=0.0) -> "PerturbationTriple":
        return cls(as_field(grid, xi), as_field(grid, eta), as_field(grid, rho))

    @property
    def size(self) -> float:
        """``|xi|_L2 + |eta|_L2 + |rho|_Linf``."""
        return norm(self.xi, "L2") + norm(self.eta, "L2") + norm(self.rho, "Linf")


# --------------------------------------------------------------------------
# reduced problem


@dataclass
class _State:
    u: ScalarField
    y: ScalarField
    J: float
    residual: float
    p: Optional[ScalarField] = None
    sigma: Optional[ScalarField] = None
    grad: Optional[np.ndarray] = None
    adjoint_residual: float = 0.0


class ReducedProblem:
    """Objective ``J(u) + int eta_lin y - rho u + eta(x, y, u)`` and its gradient.

    ``eta_lin`` and ``rho`` come from a linear perturbation triple, ``eta``
    (and the state shift ``xi``) from a nonlinear one.
    """

    def __init__(self, spec: ProblemSpec, triple: Optional[PerturbationTriple] = None,
                 zeta: NonlinearPerturbation = ZERO):
        self.base = spec
        self.spec = spec.with_state_shift(zeta.xi_eval, zeta.label) if zeta.has_xi else spec
        self.zeta = zeta
        g = spec.grid
        self.xi_lin = triple.xi if triple is not None else None
        self.eta_lin = triple.eta if triple is not None else None
        self.rho = triple.rho.values if triple is not None else np.zeros(g.size)
        self.x1, self.x2 = g.coordinates

    def _eta(self, y, u):
        return self.zeta.eta_eval(self.x1, self.x2, y.values, u.values)

    def state(self, u: ScalarField, y0: Optional[ScalarField] = None) -> _State:
        st = newton_state(self.spec, u, self.xi_lin, y0)
        J = objective(self.spec, u, st.y) - float(np.dot(self.spec.grid.weights, self.rho * u.values))
        if self.eta_lin is not None:
            J += inner_product(self.eta_lin, st.y)
        if self.zeta.has_eta:
            J += float(np.dot(self.spec.grid.weights, self._eta(st.y, u)[0]))
        return _State(u, st.y, J, st.residual)

    def objective(self, u: ScalarField) -> float:
        return self.state(as_field(self.spec.grid, u)).J

    def gradient(self, u: ScalarField) -> ScalarField:
        """Gradient density: the derivative in direction ``v`` is ``int grad * v``."""
        s = self.complete(self.state(as_field(self.spec.grid, u)))
        return ScalarField(self.spec.grid, s.grad)

    def complete(self, s: _State) -> _State:
        """Attach adjoint, switching function and gradient density."""
        g = self.spec.grid
        lift = self.eta_lin.values.copy() if self.eta_lin is not None else np.zeros(g.size)
        extra = np.zeros(g.size)
        if self.zeta.has_eta:
            _, e_y, e_u, _ = self._eta(s.y, s.u)
            lift = lift + e_y
            extra = e_u
        adj = adjoint_solution(self.spec, s.u, s.y, ScalarField(g, lift))
        s.p = adj.p
        s.adjoint_residual = adj.residual
        s.sigma = switching(self.spec, s.y, s.p)
        s.grad = s.sigma.values - self.rho + extra
        return s


# --------------------------------------------------------------------------
# pointwise models


def _vertex(grad: np.ndarray, u: np.ndarray, b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    return np.where(grad > TIE_TOL, b1, np.where(grad < -TIE_TOL, b2, u))


def _pointwise_argmin(red: ReducedProblem, s: _State, b1, b2) -> np.ndarray:
    """Minimize ``c w + eta(x, y, w)`` over ``[b1, b2]``, ``c`` the linear part of the gradient."""
    zeta = red.zeta
    _, _, e_u, _ = red._eta(s.y, s.u)
    c = s.grad - e_u  # sigma - rho
    if zeta.minimizer is not None:
        return np.asarray(zeta.minimizer(c, s.y.values, b1, b2, red.x1, red.x2), dtype=float)
    y = s.y.values

    def phi(w):
        _, _, eu, euu = zeta.eta_eval(red.x1, red.x2, y, w)
        return c + eu, euu

    lo, hi = b1.copy(), b2.copy()
    f_lo, _ = phi(lo)
    f_hi, _ = phi(hi)
    w = np.clip(0.0, lo, hi)
    for _ in range(100):
        f, fp = phi(w)
        lo = np.where(f < 0, w, lo)
        hi = np.where(f > 0, w, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = w - f / fp
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        w_new = np.where(inside, newton, 0.5 * (lo + hi))
        w_new = np.where(f == 0, w, w_new)
        done = np.max(np.abs(w_new - w)) <= 1e-15 * (1.0 + np.max(np.abs(w)))
        w = w_new
        if done:
            break
    w = np.where(f_lo >= 0, b1, w)
    return np.where(f_hi <= 0, b2, w)


# --------------------------------------------------------------------------
# descent loop


def _line_search(red: ReducedProblem, s: _State, direction: np.ndarray, slope: float,
                 damping: str) -> tuple[_State, float]:
    """Armijo backtracking from ``theta = 1``.

    The interpolated minimizer of the objective along the direction competes
    with the full step; ties go to the full step.
    """
    g = red.spec.grid
    u0 = s.u.values

    def trial(theta):
        return red.state(ScalarField(g, u0 + theta * direction), s.y)

    first = trial(1.0)
    # predicted decrease below the rounding level of J: Armijo cannot decide
    if damping == "full" or -slope <= ROUNDING_SLOPE * (1.0 + abs(s.J)):
        return first, 1.0
    full_ok = first.J <= s.J + ARMIJO_C * slope
    if full_ok and damping == "armijo-plain":
        return first, 1.0
    candidates = [(first.J, 1.0, first)] if full_ok else []
    if damping == "armijo":
        curv = first.J - s.J - slope
        if curv > 0:
            theta_q = -slope / (2.0 * curv)
            if 0.0 < theta_q < 1.0:
                tq = trial(theta_q)
                if tq.J <= s.J + ARMIJO_C * theta_q * slope:
                    candidates.append((tq.J, theta_q, tq))
    theta = 1.0
    for _ in range(0 if candidates else MAX_HALVINGS):
        theta *= 0.5
        t = trial(theta)
        if t.J <= s.J + ARMIJO_C * theta * slope:
            candidates.append((t.J, theta, t))
            break
    if not candidates:
        return s, 0.0
    J, theta, best = min(candidates, key=lambda c: c[0])
    return best, theta


def _coordinate_polish(red: ReducedProblem, s: _State, support: np.ndarray,
                       damping: str) -> tuple[_State, bool]:
    """Exact line searches node by node.

    Near convergence the vertex direction touches a handful of nodes, some
    of them (discretely) singular with an interior optimum. A joint step then
    zigzags; separate one-node steps do not.
    """
    g = red.spec.grid
    b1, b2 = red.spec.b1.values, red.spec.b2.values
    moved = False
    order = support[np.argsort(-np.abs(s.grad[support]), kind="stable")]
    for k in order:
        target = _vertex(s.grad[k:k + 1], s.u.values[k:k + 1], b1[k:k + 1], b2[k:k + 1])[0]
        step = target - s.u.values[k]
        slope = g.weights[k] * s.grad[k] * step
        if slope >= 0.0:
            continue
        direction = np.zeros(g.size)
        direction[k] = step
        new, theta = _line_search(red, s, direction, slope, damping)
        if theta > 0.0:
            s = red.complete(new)
            moved = True
    return s, moved


def _descend(red: ReducedProblem, u0: ScalarField, opts: SolveOptions, pointwise: bool) -> OptimalitySnapshot:
    spec = red.spec
    g = spec.grid
    b1, b2 = spec.b1.values, spec.b2.values
    s = red.complete(red.state(u0))
    history: list[float] = []
    for it in range(opts.max_iters + 1):
        if pointwise:
            target = _pointwise_argmin(red, s, b1, b2)
            measure = float(np.dot(g.weights, np.abs(target - s.u.values)))
        else:
            target = _vertex(s.grad, s.u.values, b1, b2)
            measure = float(np.dot(g.weights, s.grad * (s.u.values - target)))
            if measure < GAP_FLOOR:
                raise ConsistencyError(f"negative primal gap {measure:.3e} at iteration {it}")
        history.append(measure)
        if measure <= opts.gap_tol:
            return _snapshot(s, it, measure, history)
        if it == opts.max_iters:
            break
        direction = target - s.u.values
        slope = float(np.dot(g.weights, s.grad * direction))
        if slope >= 0.0:
            # no numerical descent left along the model direction
            log.debug("stalled at iteration %d: slope %.3e, measure %.3e", it, slope, measure)
            break
        support = np.flatnonzero(direction)
        if not pointwise and opts.damping != "full" and len(support) <= POLISH_NODES:
            s, moved = _coordinate_polish(red, s, support, opts.damping)
            if not moved:
                break
            continue
        new, theta = _line_search(red, s, direction, slope, opts.damping)
        if theta == 0.0:
            log.debug("line search failed at iteration %d, measure %.3e", it, measure)
            break
        s = red.complete(new)
    raise NonconvergenceError(
        f"no convergence to gap_tol {opts.gap_tol:g} after {len(history) - 1} iterations "
        f"(last stationarity measure {history[-1]:.3e})", history=history, residual=history[-1])


def _snapshot(s: _State, iterations: int, gap: float, history: list) -> OptimalitySnapshot:
    return OptimalitySnapshot(u=s.u, y=s.y, p=s.p, sigma=s.sigma, state_residual=s.residual,
                              adjoint_residual=s.adjoint_residual, objective=s.J,
                              iterations=iterations, gap=gap, gap_history=history)


def _initial(spec: ProblemSpec, u0) -> ScalarField:
    if u0 is None:
        return ScalarField(spec.grid, np.clip(0.0, spec.b1.values, spec.b2.values))
    u0 = as_field(spec.grid, u0)
    return ScalarField(spec.grid, np.clip(u0.values, spec.b1.values, spec.b2.values))


# --------------------------------------------------------------------------
# public solvers


def solve_bangbang(spec: ProblemSpec, opts: SolveOptions = SolveOptions(),
                   perturbation: Optional[PerturbationTriple] = None,
                   u0=None) -> OptimalitySnapshot:
    """Conditional gradient for the variational inequality, optionally perturbed.

    The returned ``sigma`` is ``s + beta p`` at the (perturbed) state and
    adjoint; ``rho`` is not subtracted.
    """
    if perturbation is not None:
        check_same_grid(perturbation.rho, spec.beta)
    red = ReducedProblem(spec, perturbation)
    return _descend(red, _initial(spec, u0), opts, pointwise=False)


def solve_tikhonov(spec: ProblemSpec, epsilon: float, opts: SolveOptions = SolveOptions(),
                   warm_start=None) -> OptimalitySnapshot:
    """Stationary point of the cost plus ``epsilon / 2 * int u^2``.

    Iterates ``u <- u + theta (clamp(-sigma / epsilon) - u)`` with ``theta``
    from objective backtracking; stops when the fixed-point residual in L1
    drops below ``gap_tol``.
    """
    if not epsilon > 0:
        raise PreconditionError(f"epsilon must be positive, got {epsilon}")
    red = ReducedProblem(spec, zeta=tikhonov(epsilon))
    return _descend(red, _initial(spec, warm_start), opts, pointwise=True)


def solve_nonlinear_perturbed(spec: ProblemSpec, zeta: NonlinearPerturbation,
                              opts: SolveOptions = SolveOptions(), u0=None) -> OptimalitySnapshot:
    """Stationary point of the problem with ``d + xi`` and cost ``+ eta``.

    The returned ``sigma`` is ``s + beta p`` without the ``eta_u`` term.
    """
    check_state_monotone(spec.grid, spec.d_eval, zeta)
    pointwise = False
    if zeta.has_eta:
        curvature = eta_convexity(zeta, spec.grid)
        if curvature < 0:
            raise PreconditionError(f"{zeta.label}: eta must be convex in u (eta_uu = {curvature:.3g})")
        pointwise = curvature > 0
    red = ReducedProblem(spec, zeta=zeta)
    return _descend(red, _initial(spec, u0), opts, pointwise=pointwise)


def stationarity_residual(spec: ProblemSpec, snapshot: OptimalitySnapshot, epsilon: float) -> float:
    """``|u - clamp(-sigma / epsilon)|_L1``."""
    target = np.clip(-snapshot.sigma.values / epsilon, spec.b1.values, spec.b2.values)
    return float(np.dot(spec.grid.weights, np.abs(snapshot.u.values - target)))


def pontryagin_residual(spec: ProblemSpec, snapshot: OptimalitySnapshot,
                        rho: Optional[ScalarField] = None) -> float:
    """``min_x min_{w in {b1, b2}} (sigma - rho)(w - u)``; nonnegative at a stationary point."""
    g = snapshot.sigma.values - (0.0 if rho is None else rho.values)
    u = snapshot.u.values
    return float(min(np.min(g * (spec.b1.values - u)), np.min(g * (spec.b2.values - u))))


def non_bangbang_measure(spec: ProblemSpec, snapshot: OptimalitySnapshot,
                         sigma_tol: float = 1e-6, atol: float = 1e-12) -> float:
    """Quadrature measure of nodes off the bounds where ``|sigma| > sigma_tol``."""
    u = snapshot.u.values
    off = (np.abs(u - spec.b1.values) > atol) & (np.abs(u - spec.b2.values) > atol)
    active = np.abs(snapshot.sigma.values) > sigma_tol
    return float(np.sum(spec.grid.weights[off & active]))


def multistart(solve: Callable[..., OptimalitySnapshot], spec: ProblemSpec, n_starts: int = 5,
               seed: int = 0) -> list[OptimalitySnapshot]:
    """Run ``solve(u0=...)`` from uniformly random admissible starting controls."""
    rng = np.random.default_rng(seed)
    lo, hi = spec.b1.values, spec.b2.values
    return [solve(u0=ScalarField(spec.grid, lo + (hi - lo) * rng.uniform(size=lo.shape)))
            for _ in range(n_starts)]


# --------------------------------------------------------------------------
# snapshot files

SNAPSHOT_COLUMNS = ("i", "j", "x1", "x2", "u", "y", "p", "sigma")
_MAGIC = "# affinestab snapshot v1"


def write_snapshot(path, snapshot: OptimalitySnapshot) -> Path:
    """Write a snapshot as CSV.

    Two comment lines (magic, then ``nx=.. ny=..``), a header row with
    columns ``i,j,x1,x2,u,y,p,sigma`` and one row per node in flat order
    (``i`` along ``x1`` slowest). Floats are written with ``repr`` so a
    round trip is exact.
    """
    path = Path(path)
    g = snapshot.grid
    x1, x2 = g.coordinates
    ii, jj = np.divmod(np.arange(g.size), g.ny)
    lines = [_MAGIC, f"# nx={g.nx} ny={g.ny}", ",".join(SNAPSHOT_COLUMNS)]
    cols = (x1, x2, snapshot.u.values, snapshot.y.values, snapshot.p.values, snapshot.sigma.values)
    for k in range(g.size):
        lines.append(f"{ii[k]},{jj[k]}," + ",".join(repr(float(c[k])) for c in cols))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def read_snapshot(path) -> OptimalitySnapshot:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    dims = dict(item.split("=") for item in text[1].lstrip("# ").split())
    g = GridSpec(int(dims["nx"]), int(dims["ny"]))
    if text[2] != ",".join(SNAPSHOT_COLUMNS):
        raise ValueError(f"{path}: unexpected header {text[2]!r}")
    data = np.loadtxt(text[3:], delimiter=",", ndmin=2)
    if data.shape != (g.size, len(SNAPSHOT_COLUMNS)):
        raise ValueError(f"{path}: expected {g.size} rows, got {data.shape[0]}")
    F = lambda c: ScalarField(g, data[:, SNAPSHOT_COLUMNS.index(c)])
    return OptimalitySnapshot(u=F("u"), y=F("y"), p=F("p"), sigma=F("sigma"))


def reference_solution(spec: ProblemSpec, cache_dir=None, gap_tol: float = 1e-12,
                       max_iters: int = 2000) -> OptimalitySnapshot:
    """Unperturbed solution at tight tolerance, cached on disk when ``cache_dir`` is given."""
    opts = SolveOptions(max_iters=max_iters, gap_tol=gap_tol)
    if cache_dir is None:
        return solve_bangbang(spec, opts)
    key = "_".join([spec.name, f"{spec.grid.nx}x{spec.grid.ny}", f"{gap_tol:g}"]
                   + [f"{k}={v}" for k, v in sorted(spec.params.items())
                      if isinstance(v, (int, float, str))])
    path = Path(cache_dir) / (key.replace("/", "_") + ".csv")
    if path.exists():
        cached = read_snapshot(path)
        if cached.grid == spec.grid:
            return cached
    snap = solve_bangbang(spec, opts)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_snapshot(path, snap)
    return snap
