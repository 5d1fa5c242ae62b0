"""
Dirichlet wave problem D_hat_t^2 (a chi) - laplace(chi) = f, chi = 0 on the boundary.

Two forms share one integrator:

    scalar      chi = psi,      a = e'      (psi the unknown)
    divergence  chi = p' phi,   a = 1/p'    (phi = div W1 the unknown)

With Z = kappa a chi the equation reads Z'' = kappa (laplace(chi) + f), a
second-order system in plain time derivatives that is stepped with the
trapezoidal Newmark rule (beta = 1/4, gamma = 1/2). Each step is one
symmetric positive definite solve with diag(w kappa a) + dt^2/4 K.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.special import j0

from disk_grid import divergence, gradient, h_norm, laplace_c, partials, raise_index, triple_norm
from elliptic import (apply_P, bessel_zero, coefficient_key, dirichlet_solve, factorization_cache, interior_block,
                      stiffness_matrix)
from exceptions import DomainError, PreconditionError, UnsupportedOrderError
from operators import apply_B2
from taylor import cutoff, cutoff_monomial

logger = logging.getLogger(__name__)

FORMS = ('scalar', 'divergence')
MAX_SERIES_ORDER = 3
DIRICHLET_TOL = 1e-12


def _check_form(form):
    if form not in FORMS:
        raise DomainError(f"unknown wave form '{form}' (expected one of {FORMS})")


def mass_coefficient(bundle, form):
    """a and its first two time derivatives for the chosen form."""
    frame = bundle.frame
    if form == 'scalar':
        return frame.e_prime, frame.e_prime_dot, frame.e_prime_ddot
    p, pd_, pdd = frame.p_prime, frame.p_prime_dot, frame.p_prime_ddot
    return 1.0 / p, -pd_ / p**2, -pdd / p**2 + 2.0 * pd_**2 / p**3


def _check_coefficients(bundle, form):
    a = np.real(mass_coefficient(bundle, form)[0])
    if np.min(a) <= 0.0 or not np.all(np.isfinite(a)):
        raise PreconditionError(f"wave mass coefficient must be positive and finite (min {np.min(a):.3g})")
    return float(np.max(a + 1.0 / a))


def _source_value(source, n, t, grid):
    if source is None:
        return np.zeros(grid.shape)
    if callable(source):
        return np.asarray(source(t), dtype=float)
    return np.asarray(source[n], dtype=float)


def _interior_laplace(grid, frame, chi):
    out = laplace_c(grid, frame, 1.0, chi)
    out[-1] = 0.0
    return out


@dataclass(frozen=True)
class WaveState:
    """
    One time level.

    phi is the unknown of the form (psi or phi), phi_t its grid-frame time
    derivative. chi is the Dirichlet variable, hat_mass = D_hat_t(a chi) and
    hat2_mass = D_hat_t^2(a chi).
    """

    t: float
    phi: np.ndarray
    phi_t: np.ndarray
    chi: np.ndarray
    chi_t: np.ndarray
    hat_mass: np.ndarray
    hat2_mass: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    R: np.ndarray
    solver_iters: int = 0


@dataclass
class WaveTrajectory:
    form: str
    series: object
    dt: float
    states: list = field(default_factory=list)
    sources: list = field(default_factory=list)

    @property
    def grid(self):
        return self.series.grid

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)

    def source_derivatives(self, n, order):
        """Finite-difference time derivatives [f, f', ...] of the stored source at step n."""
        if not self.sources:
            zero = np.zeros(self.grid.shape)
            return [zero] * (order + 1)
        stack = np.stack(self.sources)
        out = [stack[n]]
        current = stack
        for _ in range(order):
            current = np.gradient(current, self.dt, axis=0) if len(current) > 1 else np.zeros_like(current)
            out.append(current[n])
        return out


def make_state(bundle, form, phi, phi_t, t, source_value=None, solver_iters=0):
    """Build a WaveState from (phi, phi_t) at one time, filling Z, Y, R."""
    grid, frame = bundle.grid, bundle.frame
    a, a_dot, _ = mass_coefficient(bundle, form)
    kappa, kappa_dot = np.real(frame.kappa), np.real(frame.kappa_dot)
    a, a_dot = np.real(a), np.real(a_dot)
    f = np.zeros(grid.shape) if source_value is None else source_value

    if form == 'scalar':
        chi = phi
        chi_t = phi_t
        mass, mass_t = a * phi, a_dot * phi + a * phi_t
    else:
        chi = phi / a
        mass, mass_t = phi, phi_t
        chi_t = (mass_t - a_dot * chi) / a
    Z = kappa * mass
    Y = kappa_dot * mass + kappa * mass_t
    R = kappa * (_interior_laplace(grid, frame, chi) + f)
    R[-1] = 0.0
    return WaveState(t=float(t), phi=phi, phi_t=phi_t, chi=chi, chi_t=chi_t,
                     hat_mass=Y / kappa, hat2_mass=R / kappa, Z=Z, Y=Y, R=R,
                     solver_iters=solver_iters)


def _newmark_factor(grid, bundle, form, dt):
    frame = bundle.frame
    a = np.real(mass_coefficient(bundle, form)[0])
    key = ('newmark', form, frame.key, coefficient_key(a), float(dt))

    def build():
        mass = (grid.weights * np.real(frame.kappa) * a).ravel()[:grid.n_interior]
        return sp.diags(mass) + 0.25 * dt**2 * interior_block(grid, stiffness_matrix(grid, frame))

    return factorization_cache().get(key, build)


def _advance(grid, bundle1, form, dt, state, f1):
    """One trapezoidal step from state to the time of bundle1."""
    frame = bundle1.frame
    n = grid.n_interior
    kappa1 = np.real(frame.kappa)
    rhs_field = state.Z + dt * state.Y + 0.25 * dt**2 * (state.R + kappa1 * f1)
    rhs = (grid.weights * rhs_field).ravel()[:n]

    chi = np.zeros(grid.size)
    chi[:n] = _newmark_factor(grid, bundle1, form, dt).solve(rhs)
    chi = chi.reshape(grid.shape)

    a, a_dot, _ = mass_coefficient(bundle1, form)
    a, a_dot = np.real(a), np.real(a_dot)
    Z = kappa1 * a * chi
    R = kappa1 * (_interior_laplace(grid, frame, chi) + f1)
    R[-1] = 0.0
    Y = 2.0 * (Z - state.Z) / dt - state.Y

    mass = a * chi
    mass_t = (Y - np.real(frame.kappa_dot) * mass) / kappa1
    chi_t = (mass_t - a_dot * chi) / a
    if form == 'scalar':
        phi, phi_t = chi, chi_t
    else:
        phi, phi_t = mass, mass_t
    return WaveState(t=float(np.real(frame.t)), phi=phi, phi_t=phi_t, chi=chi, chi_t=chi_t,
                     hat_mass=Y / kappa1, hat2_mass=R / kappa1, Z=Z, Y=Y, R=R, solver_iters=1)


def wave_integrate(series, form, phi0, phi_t0, source=None, dt=0.002, t_final=0.2, t0=0.0):
    """
    Integrate the Dirichlet wave equation on a uniform time grid.

    Args:
        series: BundleSeries supplying coefficients at each time
        form: 'scalar' or 'divergence'
        phi0, phi_t0: Initial unknown and its grid-frame time derivative
        source: None, callable t -> field, or sequence indexed by step
        dt: Time step
        t_final: End time
        t0: Start time

    Returns:
        WaveTrajectory

    Raises:
        PreconditionError: initial data not vanishing on the boundary, or a
            non-positive mass coefficient
    """
    _check_form(form)
    grid = series.grid
    phi0 = np.asarray(phi0, dtype=float)
    phi_t0 = np.asarray(phi_t0, dtype=float)
    scale = max(1.0, float(np.max(np.abs(phi0))), float(np.max(np.abs(phi_t0))))
    if max(np.max(np.abs(phi0[-1])), np.max(np.abs(phi_t0[-1]))) > DIRICHLET_TOL * scale:
        raise PreconditionError("wave initial data must vanish on the boundary ring")

    steps = int(round((t_final - t0) / dt))
    bundle = series.at(t0)
    c1 = _check_coefficients(bundle, form)
    logger.debug("wave_integrate form=%s steps=%d dt=%.4g c1=%.4g", form, steps, dt, c1)

    f = _source_value(source, 0, t0, grid)
    traj = WaveTrajectory(form=form, series=series, dt=dt)
    if source is not None:
        traj.sources.append(f)
    state = make_state(bundle, form, phi0, phi_t0, t0, f)
    traj.states.append(state)

    for n in range(1, steps + 1):
        t = t0 + n * dt
        bundle = series.at(t)
        _check_coefficients(bundle, form)
        f = _source_value(source, n, t, grid)
        if source is not None:
            traj.sources.append(f)
        state = _advance(grid, bundle, form, dt, state, f)
        traj.states.append(state)
    return traj


# ---------------------------------------------------------------------------
# Reconstruction of W1 = grad S phi
# ---------------------------------------------------------------------------

def reconstruct_W1(grid, frame, phi):
    """W1 = grad q1 with laplace(q1) = phi, q1 = 0 on the boundary."""
    if not np.any(phi[:-1]):
        return np.zeros((2,) + grid.shape)
    return gradient(grid, frame, dirichlet_solve(grid, frame, 1.0, phi))


def frame_rate_term(frame, W):
    """(sigma_dot g^-1 + d_t g^-1) g W, the part of D_hat_t grad q from the moving metric."""
    return np.real(frame.sigma_dot) * W - raise_index(
        frame, np.einsum('bc...,c...->b...', np.real(frame.dt_g), W))


def reconstruct_W1_derivatives(bundle, phi, hat_phi, hat2_phi=None):
    """
    W1 and its D_hat_t derivatives from phi and its D_hat_t derivatives.

    D_hat W1 = X + grad S(D_hat phi - div X), X the frame rate term of W1;
    D_hat^2 W1 = P B2(W1, D_hat W1) + grad S(D_hat^2 phi).

    Returns:
        [W1, D_hat W1] or [W1, D_hat W1, D_hat^2 W1]
    """
    grid, frame = bundle.grid, bundle.frame
    W1 = reconstruct_W1(grid, frame, phi)
    X = frame_rate_term(frame, W1)
    div_X = divergence(grid, frame, X)
    W1_dot = X + reconstruct_W1(grid, frame, hat_phi - div_X)
    out = [W1, W1_dot]
    if hat2_phi is not None:
        B2 = apply_B2(bundle, W1, W1_dot)
        PB2 = apply_P(grid, frame, B2) if np.any(B2) else B2
        out.append(PB2 + reconstruct_W1(grid, frame, hat2_phi))
    return out


# ---------------------------------------------------------------------------
# Time-derivative chain (shared by energies and the compatibility series)
# ---------------------------------------------------------------------------

def _wave_operator(grid, form, Z):
    """t -> kappa laplace(Z / (kappa a)), the operator H(t) of Z'' = H Z + kappa f."""
    def func(bundle):
        frame = bundle.frame
        a = mass_coefficient(bundle, form)[0]
        return frame.kappa * laplace_c(grid, frame, 1.0, Z / (frame.kappa * a))
    return func


def wave_derivative_chain(series, form, t0, chi0, chi1, source_derivs=None, order=3, dirichlet=False):
    """
    Plain time derivatives chi^(k)(t0), k = 0..order, generated by the equation.

    Z^(k+2) = sum_j binom(k, j) H^(j) Z^(k-j) + (kappa f)^(k), with H^(j) read
    off the complex contour and chi recovered from Z = m chi by the Leibniz rule.

    Args:
        series: BundleSeries
        form: 'scalar' or 'divergence'
        t0: Real time
        chi0, chi1: chi and d_t chi at t0
        source_derivs: [f, f', ...] at t0 (zero when None)
        order: Highest derivative wanted
        dirichlet: Zero the boundary ring of every generated coefficient

    Returns:
        (chis, Zs) lists of length order + 1
    """
    grid = series.grid
    kappas = series.derivatives(lambda b: b.frame.kappa, t0, order)
    masses = series.derivatives(lambda b: b.frame.kappa * mass_coefficient(b, form)[0], t0, order)
    if source_derivs is None:
        source_derivs = []
    f = [np.asarray(source_derivs[k]) if k < len(source_derivs) else np.zeros(grid.shape)
         for k in range(order + 1)]

    def kappa_f(k):
        return sum(math.comb(k, j) * kappas[j] * f[k - j] for j in range(k + 1))

    chis = [np.asarray(chi0, dtype=float), np.asarray(chi1, dtype=float)]
    Zs = [masses[0] * chis[0], masses[1] * chis[0] + masses[0] * chis[1]]
    for k in range(order - 1):
        total = kappa_f(k)
        for j in range(k + 1):
            H = series.derivatives(_wave_operator(grid, form, Zs[k - j]), t0, j)[j]
            total = total + math.comb(k, j) * H
        if dirichlet:
            total[-1] = 0.0
        Zs.append(total)
        n = k + 2
        lower = sum(math.comb(n, j) * masses[j] * chis[n - j] for j in range(1, n + 1))
        chis.append((total - lower) / masses[0])
    return chis[:order + 1], Zs[:order + 1]


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------

def _metric_gradient_sq(grid, frame, q):
    d = partials(grid, q)
    return np.einsum('a...,ab...,b...->...', d, np.real(frame.g_inv), d)


def _quad(grid, frame, density):
    return float(np.sum(grid.weights * np.real(frame.kappa) * density))


def conserved_energy(bundle, form, state):
    """1/2 <chi_t, a chi_t> + 1/2 chi^T K chi, exactly conserved on frozen coefficients."""
    grid, frame = bundle.grid, bundle.frame
    a = np.real(mass_coefficient(bundle, form)[0])
    return 0.5 * _quad(grid, frame, a * state.chi_t**2 + _metric_gradient_sq(grid, frame, state.chi))


@dataclass
class WaveEnergy:
    times: np.ndarray
    conserved: np.ndarray
    energy: dict
    growth_constant: float
    elliptic_ratio: np.ndarray
    E1: dict = field(default_factory=dict)

    def to_frame(self, boundary_residual=0.0, solver_iters=None):
        data = {'t': self.times}
        for r in (0, 1, 2):
            data[f'E_r{r}'] = self.energy.get(r, np.full(len(self.times), np.nan))
        data['boundary_residual'] = boundary_residual
        data['solver_iters'] = solver_iters if solver_iters is not None else 0
        return pd.DataFrame(data)


def _scalar_energy_density(grid, frame, e_prime, chis, r):
    total = 0.0
    for s in range(r + 1):
        total += 0.5 * _quad(grid, frame, e_prime * chis[s + 1] ** 2
                             + _metric_gradient_sq(grid, frame, chis[s]) + chis[s] ** 2)
    return math.sqrt(max(total, 0.0))


def wave_energy(trajectory, r=1):
    """
    Energy series of a wave trajectory.

    Scalar form: E^2 = sum_{s<=r} 1/2 int (e' (d_t^{s+1} psi)^2 + |grad d_t^s psi|^2
    + (d_t^s psi)^2) kappa, r <= 2. Divergence form: E^2 = sum_{s<=r} 1/2 int
    (|D_hat^{s+1} W1|^2 + p' (D_hat^s phi)^2 + |D_hat^s W1|^2) kappa, r <= 1, with
    the triple norm of W1 of order r + 1 reported as E1.

    Returns:
        WaveEnergy with energies for every order up to r, the conserved part,
        the measured growth constant max (dE/dt - ||f||) / E and the ratio
        ||psi||_H2 / (time-derivative norms + ||f||)
    """
    form = trajectory.form
    max_r = 2 if form == 'scalar' else 1
    if r < 0 or r > max_r:
        raise UnsupportedOrderError(f"wave energy order {r} not supported for the {form} form")

    series, grid = trajectory.series, trajectory.grid
    energies = {k: [] for k in range(r + 1)}
    E1 = {k: [] for k in range(r + 1)} if form == 'divergence' else {}
    conserved, ratios, f_norms = [], [], []
    for n, state in enumerate(trajectory.states):
        bundle = series.at(state.t)
        frame = bundle.frame
        conserved.append(conserved_energy(bundle, form, state))
        if not (np.any(state.chi) or np.any(state.chi_t) or trajectory.sources):
            for k in energies:
                energies[k].append(0.0)
            for k in E1:
                E1[k].append(0.0)
            ratios.append(0.0)
            f_norms.append(0.0)
            continue

        f_derivs = trajectory.source_derivatives(n, r + 1)
        f_norms.append(h_norm(grid, frame, f_derivs[0], 0))
        order = r + 2 if form == 'scalar' else r + 1
        chis, Zs = wave_derivative_chain(series, form, state.t, state.chi, state.chi_t,
                                         f_derivs, order=max(order, 2), dirichlet=True)
        if form == 'scalar':
            e_prime = np.real(frame.e_prime)
            for k in energies:
                energies[k].append(_scalar_energy_density(grid, frame, e_prime, chis, k))
            denom = (sum(h_norm(grid, frame, chis[k], 0) for k in range(3))
                     + sum(h_norm(grid, frame, chis[k], 1) for k in range(2))
                     + h_norm(grid, frame, f_derivs[0], 0))
            ratios.append(h_norm(grid, frame, chis[0], 2) / denom if denom > 0 else 0.0)
        else:
            kappa = np.real(frame.kappa)
            hats = [np.real(Z) / kappa for Z in Zs]
            W1s = reconstruct_W1_derivatives(bundle, hats[0], hats[1], hats[2])
            p_prime = np.real(frame.p_prime)
            for k in energies:
                total = 0.0
                for s in range(k + 1):
                    total += 0.5 * (h_norm(grid, frame, W1s[s + 1], 0) ** 2
                                    + _quad(grid, frame, p_prime * hats[s] ** 2)
                                    + h_norm(grid, frame, W1s[s], 0) ** 2)
                energies[k].append(math.sqrt(total))
                E1[k].append(triple_norm(grid, frame, W1s, k + 1))
            denom = h_norm(grid, frame, hats[0], 0) + h_norm(grid, frame, hats[1], 0) \
                + h_norm(grid, frame, f_derivs[0], 0)
            ratios.append(h_norm(grid, frame, W1s[0], 1) / denom if denom > 0 else 0.0)

    times = trajectory.times
    energy = {k: np.array(v) for k, v in energies.items()}
    top = energy[r]
    growth = 0.0
    if len(times) > 1 and np.any(top > 0):
        dE = np.gradient(top, times)
        mask = top > 1e-14 * np.max(top)
        growth = float(np.max((dE[mask] - np.array(f_norms)[mask]) / top[mask]))
    return WaveEnergy(times=times, conserved=np.array(conserved), energy=energy,
                      growth_constant=growth, elliptic_ratio=np.array(ratios),
                      E1={k: np.array(v) for k, v in E1.items()})


# ---------------------------------------------------------------------------
# Compatibility series
# ---------------------------------------------------------------------------

@dataclass
class WaveCompatSeries:
    coefficients: list
    boundary_residuals: list
    eps: list

    @property
    def boundary_residual(self):
        return max(self.boundary_residuals) if self.boundary_residuals else 0.0

    def evaluate(self, t):
        """Cutoff sum of chi(t / eps_k) t^k psi_k / k!."""
        out = np.zeros_like(self.coefficients[0])
        for k, (coeff, eps) in enumerate(zip(self.coefficients, self.eps)):
            out = out + cutoff_monomial(t, k, eps)[0] * coeff
        return out


def series_epsilon(grid, frame, coeff, k):
    """Cutoff width with (||c_k||_{H^min(k,2)} + 1) eps_k = 1/2."""
    return 0.5 / (h_norm(grid, frame, coeff, min(k, 2)) + 1.0)


def wave_compat_series(series, psi0, psi1, source_derivs=None, K=3, form='scalar', t0=0.0):
    """
    Coefficients psi_k = d_t^k psi(0), k <= K + 1, generated by the wave equation.

    Args:
        series: BundleSeries
        psi0, psi1: Initial value and time derivative
        source_derivs: [f, f', ...] at t0
        K: Compatibility order (<= 3)
        form: 'scalar' or 'divergence' (chi variable is returned)

    Returns:
        WaveCompatSeries with coefficients, max boundary value of each
        coefficient and the cutoff widths
    """
    _check_form(form)
    if K < 0 or K > MAX_SERIES_ORDER:
        raise UnsupportedOrderError(f"compatibility order {K} not supported (K <= {MAX_SERIES_ORDER})")
    grid = series.grid
    frame = series.at(t0).frame
    chis, _ = wave_derivative_chain(series, form, t0, psi0, psi1, source_derivs, order=K + 1)
    coefficients = [np.real(c) for c in chis]
    residuals = [float(np.max(np.abs(c[-1]))) for c in coefficients]
    eps = [series_epsilon(grid, frame, c, k) for k, c in enumerate(coefficients)]
    logger.debug("wave compat series K=%d residuals=%s", K, residuals)
    return WaveCompatSeries(coefficients=coefficients, boundary_residuals=residuals, eps=eps)


# ---------------------------------------------------------------------------
# Stability of the one-step map
# ---------------------------------------------------------------------------

def amplification_matrix(series, form='scalar', dt=0.01, t=0.0):
    """
    Dense one-step map (Z_I, Y_I) -> (Z_I, Y_I) on frozen coefficients, zero source.

    Intended for small grids; its eigenvalues lie on the unit circle.
    """
    grid = series.grid
    bundle = series.at(t)
    frame = bundle.frame
    n = grid.n_interior
    a = np.real(mass_coefficient(bundle, form)[0])
    mass = (np.real(frame.kappa) * a).ravel()[:n]
    zero_f = np.zeros(grid.shape)
    columns = []
    for col in range(2 * n):
        vec = np.zeros(2 * n)
        vec[col] = 1.0
        Z = np.zeros(grid.size)
        Y = np.zeros(grid.size)
        Z[:n], Y[:n] = vec[:n], vec[n:]
        Z, Y = Z.reshape(grid.shape), Y.reshape(grid.shape)
        chi = np.zeros(grid.size)
        chi[:n] = Z.ravel()[:n] / mass
        chi = chi.reshape(grid.shape)
        R = np.real(frame.kappa) * _interior_laplace(grid, frame, chi)
        state = WaveState(t=t, phi=chi, phi_t=chi, chi=chi, chi_t=chi, hat_mass=Y, hat2_mass=R,
                          Z=Z, Y=Y, R=R)
        nxt = _advance(grid, bundle, form, dt, state, zero_f)
        columns.append(np.concatenate([nxt.Z.ravel()[:n], nxt.Y.ravel()[:n]]))
    return np.column_stack(columns)


def bessel_mode(grid, j01=None):
    """J_0(j_{0,1} r) sampled on the grid, zero on the boundary ring."""
    j01 = bessel_zero() if j01 is None else j01
    mode = j0(j01 * grid.radius)
    mode[-1] = 0.0
    return mode


def smooth_bump(grid, radius=0.5):
    """C-infinity radial bump equal to 1 at the centre and 0 for r >= radius."""
    return cutoff(grid.radius / radius)
