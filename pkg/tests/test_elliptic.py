import numpy as np
import pytest

from affinestab.elliptic import DIRECT_LIMIT, ShiftedSystem, apply, assemble, solve_shifted
from affinestab.errors import CoercivityError, GridMismatchError, SingularOperatorError
from affinestab.grid import GridSpec, ScalarField, inner_product

from conftest import loglog_slope, random_field


def naive_matrix(grid, a, b):
    """Independent loop-based assembly of the weak form, used as an oracle."""
    nx, ny = grid.shape
    hx, hy = grid.hx, grid.hy
    A = a.reshape(nx, ny)
    B = b.reshape(nx, ny)
    M = np.zeros((grid.size, grid.size))
    k = lambda i, j: i * ny + j

    def dual(n, i, h):
        return h / 2 if i in (0, n - 1) else h

    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                c = 0.5 * (A[i, j] + A[i + 1, j]) * dual(ny, j, hy) / hx
                for p, q, s in ((k(i, j), k(i + 1, j), -c), (k(i + 1, j), k(i, j), -c)):
                    M[p, q] += s
                M[k(i, j), k(i, j)] += c
                M[k(i + 1, j), k(i + 1, j)] += c
            if j + 1 < ny:
                c = 0.5 * (A[i, j] + A[i, j + 1]) * dual(nx, i, hx) / hy
                M[k(i, j), k(i, j + 1)] -= c
                M[k(i, j + 1), k(i, j)] -= c
                M[k(i, j), k(i, j)] += c
                M[k(i, j + 1), k(i, j + 1)] += c
            # rim: each side a node lies on contributes b times its 1-D trapezoid weight
            if i in (0, nx - 1):
                M[k(i, j), k(i, j)] += B[i, j] * dual(ny, j, hy)
            if j in (0, ny - 1):
                M[k(i, j), k(i, j)] += B[i, j] * dual(nx, i, hx)
    return M


def test_matrix_matches_naive_assembly(rng):
    g = GridSpec(6, 5)
    a = rng.uniform(0.5, 2.0, g.size)
    b = rng.uniform(0.1, 3.0, g.size)
    op = assemble(g, a, b)
    np.testing.assert_allclose(op.matrix.toarray(), naive_matrix(g, a, np.where(g.boundary_mask, b, 0)),
                               rtol=0, atol=1e-12)


def test_matrix_exactly_symmetric(rng):
    g = GridSpec(17, 13)
    op = assemble(g, rng.uniform(0.5, 2, g.size), 1.0)
    M = op.matrix
    assert (M != M.T).nnz == 0


def test_integration_by_parts(rng):
    g = GridSpec.square(33)
    op = assemble(g, ScalarField.from_function(g, lambda x1, x2: 1 + x1 * x2), 2.0)
    for _ in range(20):
        y, phi = random_field(g, rng), random_field(g, rng)
        lhs = inner_product(apply(op, y), phi)
        rhs = inner_product(y, apply(op, phi))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_apply_constant_vanishes_in_interior():
    g = GridSpec.square(9)
    op = assemble(g, 1.0, 2.0)
    Ly = apply(op, ScalarField.constant(g, 1.0)).values
    assert np.max(np.abs(Ly[g.interior_mask])) < 1e-12
    # rim: b * (rim weight) / node weight, e.g. 2 * (h/2)/(h^2/2) = 4/h on an edge node
    edge = 4  # (0, 4): middle of the x1 = 0 side
    assert Ly[edge] == pytest.approx(4.0 / g.hx)


def test_coefficient_checks():
    g = GridSpec.square(5)
    with pytest.raises(CoercivityError):
        assemble(g, 0.0, 1.0)
    with pytest.raises(CoercivityError):
        assemble(g, 1.0, -1.0)
    with pytest.raises(SingularOperatorError):
        assemble(g, 1.0, 0.0)


def test_apply_grid_mismatch():
    op = assemble(GridSpec.square(5), 1.0, 1.0)
    with pytest.raises(GridMismatchError):
        apply(op, ScalarField.zeros(GridSpec.square(7)))


def test_shifted_solve_residual_and_zero_rhs(rng):
    g = GridSpec.square(33)
    op = assemble(g, 1.0, 1.0)
    alpha = ScalarField(g, rng.uniform(0, 3, g.size))
    h = random_field(g, rng)
    y = solve_shifted(op, alpha, h)
    residual = apply(op, y) + alpha * y - h
    assert np.max(np.abs(residual.values)) < 1e-9
    assert np.all(solve_shifted(op, alpha, 0.0).values == 0.0)


def test_negative_shift_rejected():
    g = GridSpec.square(5)
    op = assemble(g, 1.0, 1.0)
    with pytest.raises(ValueError):
        ShiftedSystem(op, ScalarField.constant(g, -1.0))


def test_robin_manufactured_second_order():
    """y = cos(x1 - 1/2) cos(x2 - 1/2) satisfies a dy/dn + b y = 0 with b = a tan(1/2)."""
    errors, hs = [], []
    for n in (17, 33, 65):
        g = GridSpec.square(n)
        x1, x2 = g.coordinates
        a = 1 + 0.5 * x1 * x2
        op = assemble(g, a, a * np.tan(0.5))
        c1, c2 = np.cos(x1 - 0.5), np.cos(x2 - 0.5)
        s1, s2 = np.sin(x1 - 0.5), np.sin(x2 - 0.5)
        exact = c1 * c2
        f = 2 * a * exact + 0.5 * x2 * s1 * c2 + 0.5 * x1 * c1 * s2 + exact
        y = solve_shifted(op, 1.0, ScalarField(g, f))
        errors.append(np.max(np.abs(y.values - exact)))
        hs.append(g.h)
    assert loglog_slope(hs, errors) >= 1.9


def test_direct_limit_is_documented_value():
    assert DIRECT_LIMIT == 100_000
