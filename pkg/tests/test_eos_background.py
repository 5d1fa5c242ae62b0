import numpy as np
import pytest

from disk_grid import DiskGrid
from eos_background import (Background, EquationOfState, Kinematics, StaticFlow, _constant_matrix,
                            background_frame, eos_eval, euler_residual, make_flow, nonlinear_energy,
                            prescribed_h_frame, taylor_check)
from exceptions import DegenerateMapError, DomainError
from taylor import CONTOUR_RADIUS, contour_derivatives, contour_nodes


class TestEquationOfState:
    def test_vanishes_at_boundary_density(self, eos):
        assert eos.pressure(eos.rho_bar0) == 0.0
        assert eos.enthalpy(eos.rho_bar0) == 0.0
        assert eos.Q(eos.rho_bar0) == 0.0

    def test_enthalpy_relation(self, eos):
        rho = np.linspace(1.0, 3.0, 11)
        np.testing.assert_allclose(eos.dp(rho), eos.dh(rho) * rho, rtol=1e-14)

    def test_Q_derivative(self, eos):
        rho, h = 1.7, 1e-6
        dQ = (eos.Q(rho + h) - eos.Q(rho - h)) / (2 * h)
        assert dQ == pytest.approx(2.0 * eos.pressure(rho) / rho**2, rel=1e-7)

    def test_eval_reciprocal_sound_factor(self, eos):
        values = eos_eval(eos, np.array([1.0, 1.5, 2.0]))
        np.testing.assert_allclose(values.e_prime * values.p_prime, 1.0)
        np.testing.assert_allclose(values.e, np.log([1.0, 1.5, 2.0]))

    def test_eval_rejects_vacuum_side(self, eos):
        with pytest.raises(DomainError):
            eos_eval(eos, np.array([0.5, 1.0]))

    @pytest.mark.parametrize('kwargs', [{'gamma': 1.0}, {'K': 0.0}, {'rho_bar0': -1.0}])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(DomainError):
            EquationOfState(**kwargs)


class TestFlows:
    def test_unknown_family(self):
        with pytest.raises(DomainError):
            make_flow('shear')

    def test_compression_amplitude_bound(self):
        with pytest.raises(DomainError):
            make_flow('compression', alpha=0.45, beta=0.25)

    def test_degenerate_map(self, small_grid, eos):
        class MirrorFlow(StaticFlow):
            def kinematics(self, t, grid):
                J = _constant_matrix([[1.0, 0.0], [0.0, -1.0]], grid.shape)
                zero = np.zeros((2,) + grid.shape)
                return Kinematics(x=grid.y, velocity=zero, accel=zero, J=J,
                                  J_dot=np.zeros_like(J), J_ddot=np.zeros_like(J))

        with pytest.raises(DegenerateMapError) as info:
            background_frame(MirrorFlow(), eos, 0.0, small_grid)
        assert info.value.kappa_min == pytest.approx(-1.0)


class TestFrames:
    @pytest.mark.parametrize('t', [0.0, 0.4, 1.3])
    def test_compression_jacobian(self, grid, eos, t):
        flow = make_flow('compression', alpha=0.2, beta=0.25)
        frame = background_frame(flow, eos, t, grid)
        J = frame.J
        det_J = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        np.testing.assert_allclose(frame.kappa, det_J, rtol=1e-13)
        np.testing.assert_allclose(frame.kappa[-1], 1.0, rtol=1e-13)
        np.testing.assert_allclose(frame.rho, eos.rho_bar0 / frame.kappa)

    @pytest.mark.parametrize('family', ['translation', 'rotation', 'compression'])
    def test_metric_identities(self, grid, eos, family):
        frame = background_frame(make_flow(family), eos, 0.3, grid)
        g = frame.g
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        np.testing.assert_allclose(det, frame.kappa**2, rtol=1e-12)
        product = np.einsum('ab...,bc...->ac...', g, frame.g_inv)
        np.testing.assert_allclose(product[0, 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(product[0, 1], 0.0, atol=1e-12)

    def test_time_derivatives_match_differences(self, grid, eos):
        flow = make_flow('compression', alpha=0.2, beta=0.25, omega=2.0)
        t, h = 0.5, 1e-5
        plus, minus = background_frame(flow, eos, t + h, grid), background_frame(flow, eos, t - h, grid)
        frame = background_frame(flow, eos, t, grid)
        np.testing.assert_allclose(frame.kappa_dot, (plus.kappa - minus.kappa) / (2 * h), atol=1e-9)
        np.testing.assert_allclose(frame.dt_g, (plus.g - minus.g) / (2 * h), atol=1e-9)
        np.testing.assert_allclose(frame.sigma_dot, frame.kappa_dot / frame.kappa)

    def test_complex_time_contour(self, small_grid, eos):
        flow = make_flow('compression', alpha=0.2, beta=0.25)
        nodes, angles = contour_nodes(0.2)
        samples = [background_frame(flow, eos, z, small_grid).kappa for z in nodes]
        d1, d2 = contour_derivatives(samples, angles, CONTOUR_RADIUS, 2)
        frame = background_frame(flow, eos, 0.2, small_grid)
        np.testing.assert_allclose(d1, frame.kappa_dot, atol=1e-11)
        np.testing.assert_allclose(d2, frame.kappa_ddot, atol=1e-10)

    def test_prescribed_enthalpy(self, grid):
        frame = prescribed_h_frame(grid, c0=2.0)
        np.testing.assert_allclose(frame.h, 1.0 - grid.radius**2)
        np.testing.assert_allclose(frame.kappa, 1.0)
        np.testing.assert_allclose(frame.e_prime, 1.0)

    def test_coefficient_bounds(self, grid, eos):
        frame = background_frame(make_flow('compression'), eos, 0.0, grid)
        bounds = frame.coefficient_bounds()
        assert bounds['kappa_min'] > 0.0
        assert bounds['c1'] >= 2.0
        assert bounds['c1_metric'] >= 1.0


class TestBackground:
    def test_frames_are_memoized(self, grid, eos):
        background = Background(make_flow('compression'), eos, grid, cache_size=2)
        first = background.frame(0.1)
        assert background.frame(0.1) is first
        background.frame(0.2)
        background.frame(0.3)
        assert background.frame(0.1) is not first

    def test_complex_frames_bypass_cache(self, small_grid, eos):
        background = Background(make_flow('compression'), eos, small_grid)
        frame = background.frame(0.1 + 0.05j)
        assert frame.is_complex
        assert len(background._frames) == 0


class TestDiagnostics:
    def test_taylor_condition_on_prescribed_enthalpy(self, grid):
        check = taylor_check(prescribed_h_frame(grid, c0=0.8))
        assert check.passed
        assert check.c0_measured == pytest.approx(0.8, rel=1e-10)

    def test_taylor_condition_on_compression(self, grid, eos):
        frame = background_frame(make_flow('compression', alpha=0.2, beta=0.25), eos, 0.0, grid)
        assert taylor_check(frame).passed
        assert not taylor_check(frame, c0=10.0).passed

    @pytest.mark.parametrize('family', ['static', 'translation', 'rotation'])
    def test_taylor_condition_fails_without_enthalpy(self, grid, eos, family):
        frame = background_frame(make_flow(family), eos, 0.0, grid)
        assert not taylor_check(frame).passed

    @pytest.mark.parametrize('family', ['static', 'translation'])
    def test_euler_residual_of_exact_flows(self, grid, eos, family):
        assert np.max(euler_residual(make_flow(family), eos, 0.7, grid)) <= 1e-12

    def test_nonlinear_energy_conserved_by_translation(self, grid, eos):
        flow = make_flow('translation', velocity=(0.5, -1.0))
        E0 = nonlinear_energy(flow, eos, 0.0, grid)
        E1 = nonlinear_energy(flow, eos, 2.0, grid)
        assert E1 == pytest.approx(E0, rel=1e-10)
        assert E0 == pytest.approx(1.25 * np.pi, rel=0.05)

    def test_grid_requirements(self):
        with pytest.raises(DomainError):
            DiskGrid(3, 16)
