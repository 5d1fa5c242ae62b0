import numpy as np
import pytest

from disk_grid import (DiskGrid, boundary_norm, clear_boundary_divergence, divergence, divergence_boundary_term,
                       flat_metric, gradient, h_norm, inner, integrals, laplace_c, mixed_norm, norms, partials,
                       random_polynomial, random_smooth_field, scalar_inner, triple_norm)
from exceptions import DomainError, UnsupportedOrderError


def test_grid_geometry(grid):
    assert grid.r[-1] == 1.0
    np.testing.assert_allclose(np.diff(grid.r), grid.dr)
    assert grid.shape == (24, 48)
    assert grid.n_interior == 23 * 48
    assert np.sum(grid.weights) == pytest.approx(np.pi, rel=1e-13)
    assert np.all(grid.weights > 0.0)
    assert grid.ell == pytest.approx(1.0, abs=grid.dr)


@pytest.mark.parametrize('n_r, n_theta', [(3, 16), (8, 7), (8, 6)])
def test_invalid_grid(n_r, n_theta):
    with pytest.raises(DomainError):
        DiskGrid(n_r, n_theta)


def test_gradient_of_linear_function_is_exact(grid, flat):
    q = 0.3 - 1.2 * grid.y[0] + 0.7 * grid.y[1]
    grad = gradient(grid, flat, q)
    np.testing.assert_allclose(grad[0], -1.2, atol=1e-12)
    np.testing.assert_allclose(grad[1], 0.7, atol=1e-12)


def test_partials_of_quadratic_on_interior(grid, flat):
    y1, y2 = grid.y
    d = partials(grid, y1 * y2 + y1**2)
    np.testing.assert_allclose(d[0][:-1], (y2 + 2 * y1)[:-1], atol=1e-10)
    np.testing.assert_allclose(d[1][:-1], y1[:-1], atol=1e-10)


def test_divergence_of_position_field(grid, flat):
    np.testing.assert_allclose(divergence(grid, flat, grid.y), 2.0, atol=1e-12)


@pytest.mark.parametrize('n_r', [4, 5, 16, 33])
def test_divergence_of_position_field_on_every_ring_count(n_r):
    grid = DiskGrid(n_r, 16)
    np.testing.assert_allclose(divergence(grid, flat_metric(grid), grid.y), 2.0, atol=1e-12)


def test_weights_approach_polar_area_elements():
    grid = DiskGrid(64, 16)
    natural = grid.radius * grid.dr * grid.dtheta
    natural[-1] *= 0.5
    # the pole correction alternates and dies out within a few rings
    np.testing.assert_allclose(grid.weights[8:], natural[8:], rtol=2e-3)


def test_laplace_of_quadratic_away_from_boundary(grid, flat):
    psi = 0.25 * (grid.radius**2 - 1.0)
    lap = laplace_c(grid, flat, np.ones(grid.shape), psi)
    np.testing.assert_allclose(lap[:-2], 1.0, atol=1e-10)


def test_clear_boundary_divergence(grid, compression, rng):
    frame = compression.at(0.1).frame
    W = clear_boundary_divergence(grid, frame, random_smooth_field(grid, rng))
    assert np.max(np.abs(divergence(grid, frame, W)[-1])) < 1e-10


@pytest.mark.parametrize('t', [0.0, 0.35])
def test_summation_by_parts(grid, compression, rng, t):
    frame = compression.at(t).frame
    for _ in range(3):
        q = random_polynomial(grid, rng)
        W = random_smooth_field(grid, rng)
        lhs = inner(grid, frame, gradient(grid, frame, q), W) + scalar_inner(grid, frame, q, divergence(grid, frame, W))
        rhs = divergence_boundary_term(grid, frame, q, W)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_divergence_is_negative_adjoint_on_interior_potentials(grid, compression, rng):
    frame = compression.at(0.1).frame
    q = random_polynomial(grid, rng)
    q[-1] = 0.0
    W = random_smooth_field(grid, rng)
    lhs = inner(grid, frame, gradient(grid, frame, q), W)
    rhs = -scalar_inner(grid, frame, q, divergence(grid, frame, W))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_zero_order_norm_is_inner_product(grid, compression, rng):
    frame = compression.at(0.0).frame
    W = random_smooth_field(grid, rng)
    assert h_norm(grid, frame, W, 0) ** 2 == pytest.approx(inner(grid, frame, W, W), rel=1e-12)


def test_norm_orders_increase(grid, flat, rng):
    W = random_smooth_field(grid, rng)
    values = [h_norm(grid, flat, W, r) for r in range(3)]
    assert values[0] < values[1] < values[2]


def test_boundary_norm_of_unit_normal_flux(grid, flat):
    expected = np.sqrt(2 * np.pi * grid.ell)
    assert boundary_norm(grid, flat, grid.y, 0) == pytest.approx(expected, rel=1e-12)
    # constant trace has no angular modes, so higher orders agree
    assert boundary_norm(grid, flat, grid.y, 2) == pytest.approx(expected, rel=1e-12)


def test_mixed_and_triple_norms(grid, flat, rng):
    W, V = random_smooth_field(grid, rng), random_smooth_field(grid, rng)
    assert mixed_norm(grid, flat, [W], 1) == pytest.approx(h_norm(grid, flat, W, 1))
    expected = np.sqrt(h_norm(grid, flat, W, 1) ** 2 + h_norm(grid, flat, V, 0) ** 2)
    assert triple_norm(grid, flat, [W, V], 1) == pytest.approx(expected)
    result = norms(grid, flat, W, 1)
    assert result.h_r == pytest.approx(h_norm(grid, flat, W, 1))
    assert result.triple == pytest.approx(result.h_r)


def test_norm_order_limit(grid, flat, rng):
    with pytest.raises(UnsupportedOrderError):
        h_norm(grid, flat, random_smooth_field(grid, rng), 3)
    with pytest.raises(UnsupportedOrderError):
        boundary_norm(grid, flat, grid.y, -1)


def test_integrals_dispatch(grid, flat):
    ones = np.ones(grid.shape)
    assert integrals(grid, flat, ones) == pytest.approx(np.sum(grid.weights))
    assert integrals(grid, flat, np.ones(grid.n_theta)) == pytest.approx(2 * np.pi * grid.ell)
    assert integrals(grid, flat, grid.y, grid.y) == pytest.approx(inner(grid, flat, grid.y, grid.y))
    with pytest.raises(DomainError):
        integrals(grid, flat, np.ones((2, 2) + grid.shape))
