import math

import numpy as np
import pytest

from disk_grid import h_norm
from divfree_solver import (ConjugateGradient, conserved_energy, divfree_energy, divfree_integrate, full_energy,
                            measure_frequency)
from elliptic import apply_P
from exceptions import SolverError, UnsupportedOrderError
from operators import harmonic_gradient

MODE = 2


@pytest.fixture(scope='module')
def eigen_run(prescribed):
    grid = prescribed.grid
    W0 = apply_P(grid, prescribed.at(0.0).frame, harmonic_gradient(grid, MODE))
    period = 2.0 * math.pi / math.sqrt(MODE)
    dt = period / 200
    return divfree_integrate(prescribed, W0, np.zeros_like(W0), dt=dt, t_final=60 * dt)


class TestConjugateGradient:
    @pytest.fixture
    def system(self, rng):
        M = rng.standard_normal((12, 12))
        return M @ M.T + 12 * np.eye(12), rng.standard_normal(12)

    def test_solves_spd_system(self, system):
        A, b = system
        solver = ConjugateGradient(lambda x: A @ x, np.dot, tol=1e-12)
        np.testing.assert_allclose(A @ solver.solve(b), b, atol=1e-9)
        assert 0 < solver.iterations <= 12

    def test_zero_rhs(self, system):
        A, _ = system
        solver = ConjugateGradient(lambda x: A @ x, np.dot)
        assert not np.any(solver.solve(np.zeros(12)))
        assert solver.iterations == 0

    def test_reports_failure(self, system):
        A, b = system
        with pytest.raises(SolverError) as excinfo:
            ConjugateGradient(lambda x: A @ x, np.dot, tol=1e-14, max_iter=1).solve(b)
        assert excinfo.value.iterations == 1


class TestEigenmode:
    def test_frequency(self, eigen_run):
        assert measure_frequency(eigen_run) == pytest.approx(math.sqrt(MODE), rel=0.01)

    def test_energy_conserved(self, eigen_run, prescribed):
        bundle = prescribed.at(0.0)
        energies = np.array([conserved_energy(bundle, s.W0, s.W0dot) for s in eigen_run.states])
        assert np.max(np.abs(energies - energies[0])) < 1e-7 * energies[0]
        assert full_energy(bundle, eigen_run.states[0].W0, eigen_run.states[0].W0dot) > energies[0]

    def test_stays_divergence_free(self, eigen_run):
        defects = [s.projection_defect for s in eigen_run.states]
        assert max(defects) < 1e-8
        assert all(s.cg_iters > 0 for s in eigen_run.states[1:])

    def test_energy_series(self, eigen_run):
        energy = divfree_energy(eigen_run, r=1)
        assert set(energy.E0) == {0, 1}
        assert np.all(energy.E0_tilde[0] > 0.0)
        assert energy.growth_constant[0] >= 1.0
        frame = energy.to_frame()
        assert list(frame.columns) == ['t', 'E00', 'E01', 'boundary_norm', 'projection_defect', 'cg_iters']
        assert len(frame) == len(eigen_run)

    def test_energy_order_limit(self, eigen_run):
        with pytest.raises(UnsupportedOrderError):
            divfree_energy(eigen_run, r=2)


def test_frequency_of_short_run_is_undefined(prescribed_small, caplog):
    grid = prescribed_small.grid
    W0 = apply_P(grid, prescribed_small.at(0.0).frame, harmonic_gradient(grid, MODE))
    traj = divfree_integrate(prescribed_small, W0, np.zeros_like(W0), dt=0.05, t_final=0.2)
    with caplog.at_level('WARNING', logger='divfree_solver'):
        assert math.isnan(measure_frequency(traj))
    assert 'No zero crossing' in caplog.text


def test_zero_data_stays_zero(prescribed_small):
    grid = prescribed_small.grid
    zero = np.zeros((2,) + grid.shape)
    traj = divfree_integrate(prescribed_small, zero, zero, dt=0.05, t_final=0.2)
    assert len(traj) == 5
    assert all(not np.any(s.W0) and s.cg_iters == 0 for s in traj.states)


def test_time_reversible_on_static_coefficients(prescribed_small):
    grid = prescribed_small.grid
    frame = prescribed_small.at(0.0).frame
    W0 = apply_P(grid, frame, harmonic_gradient(grid, 3))
    forward = divfree_integrate(prescribed_small, W0, np.zeros_like(W0), dt=0.05, t_final=0.25)
    end = forward.states[-1]
    backward = divfree_integrate(prescribed_small, end.W0, end.W0dot, dt=-0.05, t_final=0.0, t0=end.t)
    assert backward.times[-1] == pytest.approx(0.0, abs=1e-12)
    assert h_norm(grid, frame, backward.states[-1].W0 - W0, 0) < 1e-7 * h_norm(grid, frame, W0, 0)


def test_forcing_on_moving_background(compression_small):
    grid = compression_small.grid
    frame = compression_small.at(0.0).frame
    F = apply_P(grid, frame, harmonic_gradient(grid, 2))
    zero = np.zeros_like(F)
    traj = divfree_integrate(compression_small, zero, zero, forcing=lambda t: t * F, dt=0.02, t_final=0.1)
    assert len(traj.forcing) == 6
    assert h_norm(grid, traj.series.at(0.1).frame, traj.states[-1].W0, 0) > 0.0
    assert divfree_energy(traj, r=0).growth_constant[0] > 0.0
