import json

import numpy as np
import pytest

from conftest import make_series
from coupled import (SCHEMA_VERSION, ManufacturedSolution, SolverState, apply_L, compat_series, decompose,
                     energy_report, solve_linearized, source_time_derivatives, split_LM)
from disk_grid import DiskGrid, divergence, h_norm, random_smooth_field
from exceptions import ContractionError, PreconditionError, UnsupportedOrderError

SOLVE = dict(dt=0.02, t_final=0.1, tol=1e-8, max_iter=40)


def random_state(grid, rng, t=0.0):
    return SolverState(t=t, W=random_smooth_field(grid, rng), W_dot=random_smooth_field(grid, rng),
                       W_ddot=random_smooth_field(grid, rng))


@pytest.fixture(scope='module')
def manufactured(prescribed_small):
    return ManufacturedSolution(prescribed_small, amplitude=0.5)


@pytest.fixture(scope='module')
def manufactured_run(prescribed_small, manufactured):
    return solve_linearized(prescribed_small, F=manufactured.forcing, data=manufactured.data(), **SOLVE)


class TestSplitting:
    def test_decompose(self, compression, rng):
        grid = compression.grid
        bundle = compression.at(0.1)
        state = random_state(grid, rng, 0.1)
        parts = decompose(bundle, state)
        np.testing.assert_allclose(parts.W, state.W)
        np.testing.assert_allclose(parts.W_ddot, state.W_ddot)
        scale = np.max(np.abs(divergence(grid, bundle.frame, state.W)))
        assert np.max(np.abs(divergence(grid, bundle.frame, parts.W0)[:-1])) < 1e-9 * scale

    def test_L_is_L_tilde_plus_M_tilde(self, compression, rng):
        grid = compression.grid
        bundle = compression.at(0.1)
        state = random_state(grid, rng, 0.1)
        L_tilde, M_tilde = split_LM(bundle, state)
        LW = apply_L(bundle, state)
        assert h_norm(grid, bundle.frame, L_tilde + M_tilde - LW, 0) < 1e-8 * h_norm(grid, bundle.frame, LW, 0)

    def test_L_needs_second_derivative(self, compression, rng):
        grid = compression.grid
        W = random_smooth_field(grid, rng)
        with pytest.raises(PreconditionError):
            apply_L(compression.at(0.0), SolverState(t=0.0, W=W, W_dot=W))

    def test_L_of_zero_state(self, compression):
        zero = np.zeros((2,) + compression.grid.shape)
        assert not np.any(apply_L(compression.at(0.0), SolverState(t=0.0, W=zero, W_dot=zero, W_ddot=zero)))


def test_source_time_derivatives(grid, rng):
    X = random_smooth_field(grid, rng)
    value, first, second = source_time_derivatives(lambda t: (1.0 + 2.0 * t + 3.0 * t**2) * X, 0.5, 2)
    np.testing.assert_allclose(value, 2.75 * X, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(first, 5.0 * X, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(second, 6.0 * X, rtol=1e-6, atol=1e-6)
    assert source_time_derivatives(None, 0.0, 2) is None


class TestCompatSeries:
    def test_zero_data(self, prescribed_small):
        zero = np.zeros((2,) + prescribed_small.grid.shape)
        compat = compat_series(prescribed_small, zero, zero)
        assert compat.is_zero
        assert compat.boundary_residual == 0.0
        assert not any(np.any(X) for X in compat.evaluate(0.05, prescribed_small.at(0.05).frame))

    def test_manufactured_coefficients(self, prescribed_small, manufactured):
        W0, W1 = manufactured.data()
        compat = compat_series(prescribed_small, W0, W1, F=manufactured.forcing, K=2)
        assert len(compat.coefficients) == 4
        assert compat.boundary_residual < 1e-12
        W, W_dot, W_ddot = compat.evaluate(0.0, prescribed_small.at(0.0).frame)
        np.testing.assert_allclose(W, W0)
        np.testing.assert_allclose(W_dot, W1)
        np.testing.assert_allclose(W_ddot, manufactured.state(0.0).W_ddot, atol=1e-8)

    def test_order_limit(self, prescribed_small):
        zero = np.zeros((2,) + prescribed_small.grid.shape)
        with pytest.raises(UnsupportedOrderError):
            compat_series(prescribed_small, zero, zero, K=4)


class TestPreconditions:
    def test_incompatible_data(self, prescribed_small):
        grid = prescribed_small.grid
        with pytest.raises(PreconditionError, match='compatibility'):
            solve_linearized(prescribed_small, data=(grid.y, np.zeros_like(grid.y)), **SOLVE)

    def test_taylor_failure(self, small_grid):
        series = make_series(small_grid, 'compression', alpha=0.0, beta=0.0)
        with pytest.raises(PreconditionError, match='Taylor'):
            solve_linearized(series, **SOLVE)

    def test_norm_order(self, prescribed_small):
        with pytest.raises(UnsupportedOrderError):
            solve_linearized(prescribed_small, r=2, **SOLVE)


def test_zero_problem_converges_immediately(prescribed_small):
    traj, report = solve_linearized(prescribed_small, **SOLVE)
    assert report.converged and report.iterations == 1
    assert len(traj) == 6
    assert all(not np.any(s.W) for s in traj.states)


@pytest.mark.slow
class TestManufacturedSolve:
    def test_converges_to_manufactured_solution(self, manufactured_run, manufactured):
        traj, report = manufactured_run
        assert report.converged
        assert report.increments[-1] < SOLVE['tol']
        assert manufactured.error(traj) < 0.05
        assert report.solution_residual < 1e-2

    def test_report_serializes(self, manufactured_run):
        _, report = manufactured_run
        data = json.loads(report.to_json())
        assert data['schema_version'] == SCHEMA_VERSION
        assert data['iterations'] == len(data['sweeps'])
        assert data['sweeps'][0]['iteration'] == 1

    def test_energy_report(self, manufactured_run):
        traj, _ = manufactured_run
        energy = energy_report(traj, r=1)
        frame = energy.to_frame()
        assert {'t', 'Etilde_0', 'Etilde_1', 'E_0', 'E_1', 'boundary_norm', 'base_energy'} <= set(frame.columns)
        assert len(frame) == len(traj)
        assert set(energy.constants()) == {'base_energy_constant', 'equivalence_constant', 'growth_ratio',
                                           'split_constant', 'div_lower', 'div_upper', 'trace_constant'}
        assert energy.growth_ratio[0] >= 1.0
        with pytest.raises(UnsupportedOrderError):
            energy_report(traj, r=3)

    def test_sweep_cap(self, prescribed_small, manufactured):
        with pytest.raises(ContractionError) as excinfo:
            solve_linearized(prescribed_small, F=manufactured.forcing, data=manufactured.data(),
                             **{**SOLVE, 'max_iter': 1})
        assert len(excinfo.value.increments) == 1

    def test_parallel_sweeps_match(self, prescribed_small, manufactured, manufactured_run):
        traj, _ = manufactured_run
        parallel, _ = solve_linearized(prescribed_small, F=manufactured.forcing, data=manufactured.data(),
                                       parallel=True, **SOLVE)
        np.testing.assert_allclose(parallel.states[-1].W, traj.states[-1].W, atol=1e-12)


@pytest.mark.slow
def test_manufactured_refinement_on_compressing_background():
    errors = []
    for n_r, n_theta, dt in ((12, 24, 0.02), (24, 48, 0.01)):
        series = make_series(DiskGrid(n_r, n_theta), 'compression', alpha=0.2, beta=0.25, omega=1.0)
        mms = ManufacturedSolution(series, amplitude=0.5)
        traj, report = solve_linearized(series, F=mms.forcing, data=mms.data(), dt=dt, t_final=0.2, tol=1e-8,
                                        max_iter=40)
        assert report.converged
        assert max(report.ratios) < 1.0
        errors.append(mms.error(traj))
    assert errors[1] < errors[0] / 3.0
