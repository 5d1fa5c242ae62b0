import math

import numpy as np
import pytest

from conftest import make_series
from disk_grid import DiskGrid, divergence
from elliptic import bessel_zero
from exceptions import DomainError, PreconditionError, UnsupportedOrderError
from wave_solver import (amplification_matrix, bessel_mode, conserved_energy, make_state, reconstruct_W1,
                         smooth_bump, wave_compat_series, wave_derivative_chain, wave_energy, wave_integrate)


@pytest.fixture(scope='module')
def bessel_run(prescribed):
    grid = prescribed.grid
    return wave_integrate(prescribed, 'scalar', bessel_mode(grid), np.zeros(grid.shape), dt=0.01, t_final=0.5)


def test_bessel_mode_profile(grid):
    mode = bessel_mode(grid)
    assert mode[-1].max() == 0.0
    assert mode[0].min() == pytest.approx(1.0, abs=1e-3)


def test_smooth_bump(grid):
    bump = smooth_bump(grid, 0.5)
    np.testing.assert_allclose(bump[0], 1.0)
    assert not np.any(bump[grid.r >= 0.5])


def test_bessel_mode_oscillates(bessel_run, prescribed):
    grid = prescribed.grid
    j01 = bessel_zero()
    state = bessel_run.states[-1]
    assert state.t == pytest.approx(0.5)
    exact = math.cos(j01 * state.t) * bessel_mode(grid, j01)
    assert np.max(np.abs(state.phi - exact)) < 0.05


def test_energy_conserved_on_static_coefficients(bessel_run, prescribed):
    bundle = prescribed.at(0.0)
    energies = np.array([conserved_energy(bundle, 'scalar', s) for s in bessel_run.states])
    assert np.max(np.abs(energies - energies[0])) < 1e-8 * energies[0]


def test_forms_agree_for_unit_coefficients(prescribed):
    grid = prescribed.grid
    phi0 = bessel_mode(grid)
    scalar = wave_integrate(prescribed, 'scalar', phi0, np.zeros(grid.shape), dt=0.02, t_final=0.1)
    div = wave_integrate(prescribed, 'divergence', phi0, np.zeros(grid.shape), dt=0.02, t_final=0.1)
    np.testing.assert_allclose(div.states[-1].phi, scalar.states[-1].phi, atol=1e-10)


def test_boundary_data_rejected(prescribed):
    grid = prescribed.grid
    with pytest.raises(PreconditionError):
        wave_integrate(prescribed, 'scalar', np.ones(grid.shape), np.zeros(grid.shape), dt=0.01, t_final=0.02)


def test_unknown_form(prescribed):
    grid = prescribed.grid
    with pytest.raises(DomainError):
        wave_integrate(prescribed, 'vector', bessel_mode(grid), np.zeros(grid.shape))


def test_moving_background_with_source(compression_small):
    grid = compression_small.grid
    bump = smooth_bump(grid, 0.6)
    traj = wave_integrate(compression_small, 'scalar', bump, np.zeros(grid.shape),
                          source=lambda t: math.sin(t) * bump, dt=0.01, t_final=0.1)
    assert len(traj) == 11
    assert len(traj.sources) == 11
    assert all(not np.any(s.chi[-1]) for s in traj.states)
    assert all(np.all(np.isfinite(s.phi)) for s in traj.states)


def test_one_step_map_is_neutral():
    series = make_series(DiskGrid(4, 8), 'prescribed_h', c0=1.0)
    eigenvalues = np.linalg.eigvals(amplification_matrix(series, dt=0.05))
    np.testing.assert_allclose(np.abs(eigenvalues), 1.0, atol=1e-8)


def test_make_state_fills_flux_variables(prescribed):
    grid = prescribed.grid
    mode = bessel_mode(grid)
    state = make_state(prescribed.at(0.0), 'scalar', mode, 2 * mode, 0.0)
    np.testing.assert_allclose(state.Z, mode)
    np.testing.assert_allclose(state.Y, 2 * mode)
    assert not np.any(state.R[-1])


def test_derivative_chain_on_static_coefficients(prescribed):
    grid = prescribed.grid
    mode = bessel_mode(grid)
    chis, _ = wave_derivative_chain(prescribed, 'scalar', 0.0, mode, np.zeros(grid.shape), order=3, dirichlet=True)
    state = make_state(prescribed.at(0.0), 'scalar', mode, np.zeros(grid.shape), 0.0)
    np.testing.assert_allclose(chis[2], state.R, atol=1e-8)
    np.testing.assert_allclose(chis[3], 0.0, atol=1e-8)


class TestCompatSeries:
    def test_coefficients(self, prescribed):
        grid = prescribed.grid
        mode = bessel_mode(grid)
        compat = wave_compat_series(prescribed, mode, np.zeros(grid.shape), K=2)
        assert len(compat.coefficients) == 4
        np.testing.assert_allclose(compat.coefficients[0], mode)
        np.testing.assert_allclose(compat.evaluate(0.0), mode)
        assert all(0.0 < eps <= 0.5 for eps in compat.eps)

    def test_order_limit(self, prescribed):
        grid = prescribed.grid
        with pytest.raises(UnsupportedOrderError):
            wave_compat_series(prescribed, bessel_mode(grid), np.zeros(grid.shape), K=4)


class TestEnergies:
    def test_orders(self, bessel_run):
        energy = wave_energy(bessel_run, r=1)
        assert set(energy.energy) == {0, 1}
        assert np.all(energy.energy[1] >= energy.energy[0])
        assert np.all(energy.energy[0] > 0.0)
        frame = energy.to_frame()
        assert list(frame.columns) == ['t', 'E_r0', 'E_r1', 'E_r2', 'boundary_residual', 'solver_iters']
        assert len(frame) == len(bessel_run)

    def test_order_limits(self, bessel_run):
        with pytest.raises(UnsupportedOrderError):
            wave_energy(bessel_run, r=3)


def test_reconstructed_gradient_has_prescribed_divergence(grid, flat):
    phi = bessel_mode(grid)
    W1 = reconstruct_W1(grid, flat, phi)
    np.testing.assert_allclose(divergence(grid, flat, W1)[:-1], phi[:-1], atol=1e-9)
