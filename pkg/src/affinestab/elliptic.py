"""
Discrete Robin-boundary diffusion operator and its shifted solves.

The matrix ``M`` realizes the weak form

    sum_faces a_face * (y_k - y_l)(phi_k - phi_l) * |dual face| / h
        + sum_rim b * y * phi * |rim weight|

on the vertex-centered dual mesh, so ``M`` is exactly symmetric and the
strong-form action is ``apply(y) = (M y) / w`` with ``w`` the trapezoidal
node weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (CoercivityError, GridMismatchError, NonconvergenceError,
                     SingularOperatorError)
from .grid import FieldLike, GridSpec, ScalarField, as_field

log = logging.getLogger(__name__)

LINEAR_RTOL = 1e-12
# direct factorization below this many unknowns, CG above
DIRECT_LIMIT = 100_000


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    grid: GridSpec
    a_field: ScalarField
    b_boundary: np.ndarray  # per node, zero off the rim
    matrix: sp.csc_matrix = field(repr=False)

    def factorize(self, alpha: FieldLike = 0.0) -> "ShiftedSystem":
        """Prepare repeated solves of ``(L + alpha) y = h``."""
        return ShiftedSystem(self, as_field(self.grid, alpha))


def assemble(grid: GridSpec, a_field: FieldLike, b_boundary: FieldLike) -> EllipticOperator:
    """Assemble the 5-point Robin operator for diffusion ``a`` and Robin ``b``.

    ``b_boundary`` may be a scalar, a full nodal field or array (only rim
    entries are used).
    """
    a = as_field(grid, a_field)
    if np.min(a.values) <= 0.0:
        raise CoercivityError(f"diffusion coefficient must be positive, min = {np.min(a.values):g}")
    b = np.where(grid.boundary_mask, np.broadcast_to(np.asarray(
        b_boundary.values if isinstance(b_boundary, ScalarField) else b_boundary, dtype=float),
        (grid.size,)), 0.0)
    if np.min(b) < 0.0:
        raise CoercivityError(f"Robin coefficient must be nonnegative, min = {np.min(b):g}")
    if np.max(b) <= 0.0:
        raise SingularOperatorError("Robin coefficient vanishes on the whole boundary")

    nx, ny = grid.shape
    wx, wy = grid.axis_weights
    A = a.as_array()
    idx = np.arange(grid.size).reshape(nx, ny)

    # x-faces between (i, j) and (i+1, j): dual face length wy[j]
    cx = 0.5 * (A[:-1, :] + A[1:, :]) * wy[None, :] / grid.hx
    # y-faces between (i, j) and (i, j+1): dual face length wx[i]
    cy = 0.5 * (A[:, :-1] + A[:, 1:]) * wx[:, None] / grid.hy

    k = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
    l = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
    c = np.concatenate([cx.ravel(), cy.ravel()])

    diag = np.zeros(grid.size)
    np.add.at(diag, k, c)
    np.add.at(diag, l, c)
    diag += b * grid.boundary_weights

    rows = np.concatenate([k, l, np.arange(grid.size)])
    cols = np.concatenate([l, k, np.arange(grid.size)])
    vals = np.concatenate([-c, -c, diag])
    M = sp.csc_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))
    M.sum_duplicates()
    return EllipticOperator(grid=grid, a_field=a, b_boundary=b, matrix=M)


def apply(op: EllipticOperator, y: ScalarField) -> ScalarField:
    """Strong-form action ``L y`` (weak action divided by node weights)."""
    if y.grid != op.grid:
        raise GridMismatchError(f"field grid {y.grid} does not match operator grid {op.grid}")
    return ScalarField(op.grid, (op.matrix @ y.values) / op.grid.weights)


class ShiftedSystem:
    """Factorized ``M + diag(w * alpha)`` with residual-checked solves."""

    def __init__(self, op: EllipticOperator, alpha: ScalarField):
        if np.min(alpha.values) < 0.0:
            raise ValueError(f"shift must be nonnegative, min = {np.min(alpha.values):g}")
        self.op = op
        self.alpha = alpha
        w = op.grid.weights
        self.matrix = (op.matrix + sp.diags(w * alpha.values)).tocsc()
        self._abs = abs(self.matrix)
        self._lu = spla.splu(self.matrix) if op.grid.size <= DIRECT_LIMIT else None

    def solve_weak(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``K y = rhs`` for an already weighted right-hand side."""
        rhs = np.asarray(rhs, dtype=float)
        scale = np.max(np.abs(rhs))
        if scale == 0.0:
            return np.zeros_like(rhs)
        K = self.matrix
        if self._lu is not None:
            y = self._lu.solve(rhs)
        else:
            y, info = spla.cg(K, rhs, rtol=LINEAR_RTOL * 1e-2, maxiter=20 * K.shape[0])
            if info != 0:
                raise NonconvergenceError("conjugate gradients did not converge",
                                          residual=float(np.max(np.abs(K @ y - rhs))))
        res = rhs - K @ y
        for _ in range(3):
            if np.max(np.abs(res)) <= LINEAR_RTOL * scale or self._lu is None:
                break
            y = y + self._lu.solve(res)
            res = rhs - K @ y
        rnorm = float(np.max(np.abs(res)))
        if rnorm > LINEAR_RTOL * scale:
            # accept when the residual is at the rounding level of |K||y|
            floor = float(np.max(self._abs @ np.abs(y) + np.abs(rhs)))
            if rnorm > LINEAR_RTOL * floor:
                raise NonconvergenceError(
                    f"linear solve residual {rnorm:.3e} exceeds tolerance", residual=rnorm)
            log.debug("linear residual %.2e at rounding floor %.2e", rnorm, floor)
        return y

    def solve(self, h: FieldLike) -> ScalarField:
        hf = as_field(self.op.grid, h)
        return ScalarField(self.op.grid, self.solve_weak(self.op.grid.weights * hf.values))


def solve_shifted(op: EllipticOperator, alpha: FieldLike, h: FieldLike) -> ScalarField:
    """Solve ``L y + alpha y = h``."""
    return op.factorize(alpha).solve(h)
