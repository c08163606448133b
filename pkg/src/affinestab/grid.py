"""
Uniform node-based discretization of the unit square.

Nodes are vertex-centered, ``x1 = i*hx`` and ``x2 = j*hy``, stored flat in
C order with ``k = i*ny + j`` (``x1`` varies slowest). Integrals use the
tensor trapezoidal rule, which integrates constants exactly and makes the
discrete inner product symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .errors import GridMismatchError

NORM_KINDS = ("L1", "L2", "Linf")


@dataclass(frozen=True)
class GridSpec:
    """Node lattice of ``nx`` by ``ny`` points on (0,1)^2."""

    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError(f"node counts must be integers, got {self.nx}, {self.ny}")
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"need at least 3 nodes per axis, got {self.nx}x{self.ny}")

    @classmethod
    def square(cls, n: int) -> "GridSpec":
        return cls(n, n)

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @cached_property
    def x1_axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)

    @cached_property
    def x2_axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.ny)

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat nodal coordinate arrays ``(x1, x2)``."""
        X1, X2 = np.meshgrid(self.x1_axis, self.x2_axis, indexing="ij")
        return _frozen(X1.ravel()), _frozen(X2.ravel())

    @cached_property
    def axis_weights(self) -> tuple[np.ndarray, np.ndarray]:
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return _frozen(wx), _frozen(wy)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weight of every node."""
        wx, wy = self.axis_weights
        return _frozen(np.outer(wx, wy).ravel())

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[[0, -1], :] = True
        m[:, [0, -1]] = True
        return _frozen(m.ravel())

    @cached_property
    def interior_mask(self) -> np.ndarray:
        return _frozen(~self.boundary_mask)

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        """1-D trapezoidal arc-length weight of each rim node.

        A corner collects half a cell from each of its two sides; interior
        nodes get zero.
        """
        wx, wy = self.axis_weights
        bw = np.zeros(self.shape)
        bw[0, :] += wy
        bw[-1, :] += wy
        bw[:, 0] += wx
        bw[:, -1] += wx
        return _frozen(bw.ravel())

    @property
    def measure(self) -> float:
        return 1.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=bool if a.dtype == bool else float)
    a.setflags(write=False)
    return a


FieldLike = Union["ScalarField", float, int, np.ndarray]


class ScalarField:
    """Immutable real-valued nodal function on a :class:`GridSpec`."""

    __slots__ = ("grid", "values")
    __array_priority__ = 1000

    def __init__(self, grid: GridSpec, values):
        vals = np.array(values, dtype=float, copy=True)
        if vals.ndim == 2 and vals.shape == grid.shape:
            vals = vals.ravel()
        if vals.ndim == 0:
            vals = np.full(grid.size, float(vals))
        if vals.shape != (grid.size,):
            raise ValueError(f"expected {grid.size} nodal values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.size, float(c)))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls.constant(grid, 0.0)

    @classmethod
    def from_function(cls, grid: GridSpec, f: Callable) -> "ScalarField":
        x1, x2 = grid.coordinates
        return cls(grid, np.broadcast_to(f(x1, x2), (grid.size,)))

    def as_array(self) -> np.ndarray:
        """Values reshaped to ``(nx, ny)``."""
        return self.values.reshape(self.grid.shape)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    # arithmetic -------------------------------------------------------
    def _other(self, other) -> np.ndarray:
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridMismatchError(f"grids differ: {self.grid} vs {other.grid}")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def __abs__(self):
        return ScalarField(self.grid, np.abs(self.values))

    def __len__(self):
        return self.grid.size

    def __repr__(self):
        return f"ScalarField({self.grid.nx}x{self.grid.ny}, max|.|={np.max(np.abs(self.values)):.3g})"


def check_same_grid(*fields: ScalarField) -> GridSpec:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grids differ: {grid} vs {f.grid}")
    return grid


def as_field(grid: GridSpec, value: FieldLike) -> ScalarField:
    """Promote scalars/arrays to a field on ``grid``; check grid of fields."""
    if isinstance(value, ScalarField):
        check_same_grid(ScalarField.zeros(grid), value)
        return value
    return ScalarField(grid, np.broadcast_to(np.asarray(value, dtype=float), (grid.size,)))


def norm(field: ScalarField, kind: str = "L2") -> float:
    """Discrete L1, L2 (trapezoidal) or Linf (nodal max) norm."""
    v = field.values
    if kind == "Linf":
        return float(np.max(np.abs(v)))
    w = field.grid.weights
    if kind == "L1":
        return float(np.dot(w, np.abs(v)))
    if kind == "L2":
        return float(np.sqrt(np.dot(w, v * v)))
    raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")


def inner_product(f: ScalarField, g: ScalarField) -> float:
    grid = check_same_grid(f, g)
    return float(np.dot(grid.weights, f.values * g.values))


def integrate(f: ScalarField) -> float:
    return float(np.dot(f.grid.weights, f.values))


def measure_level_set(sigma: ScalarField, eps: float) -> float:
    """Quadrature measure of ``{x : |sigma(x)| <= eps}``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    band = np.abs(sigma.values) <= eps
    return float(np.sum(sigma.grid.weights[band]))
