"""
Linearized operators on Lagrangian-frame vector fields.

    C W    = -grad( h' div(rho W) )               pressure/enthalpy operator
    A_f W  = -P grad( W.df )                     normal operator, A = A_h
    B      = first-order terms from the moving frame
    B2     = second-order frame terms for gradient fields, D_hat^2 W1 = P B2 + ...

The normal operator only sees the boundary trace of W, through the
summation-by-parts flux W^r - (w_N / ell dtheta) div W. With that choice A is
exactly symmetric and nonnegative on projected fields when -d_r h > 0.
"""

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from disk_grid import (corrected_normal_flux, divergence, gradient, h_norm, inner, partials,
                       radial_component, raise_index, vector_partials)
from elliptic import apply_P, project
from exceptions import PreconditionError
from taylor import CONTOUR_RADIUS, contour_derivatives, contour_nodes

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-12
IDENTITY_STEP = 1e-3


class CoefficientBundle:
    """A background frame on its grid, exposing the coefficient fields of the operators."""

    def __init__(self, grid, frame):
        self.grid = grid
        self.frame = frame
        if not frame.is_complex:
            h_bdry = float(np.max(np.abs(frame.h[-1])))
            if h_bdry > BOUNDARY_TOL * max(1.0, float(np.max(np.abs(frame.h)))):
                raise PreconditionError(f"enthalpy does not vanish on the boundary (max {h_bdry:.3g})")

    def __repr__(self):
        return f"CoefficientBundle({self.frame.family}, t={self.frame.t})"

    @property
    def t(self):
        return self.frame.t

    @property
    def h(self):
        return self.frame.h

    @property
    def rho(self):
        return self.frame.rho

    @property
    def p_prime(self):
        return self.frame.p_prime

    @property
    def e_prime(self):
        return self.frame.e_prime

    @property
    def h_prime(self):
        return self.frame.h_prime

    @property
    def dh_normal(self):
        """Analytic d_r h on the boundary ring."""
        dh = self.frame.dh
        return self.grid.cos[-1] * dh[0, -1] + self.grid.sin[-1] * dh[1, -1]


class BundleSeries:
    """
    Time-indexed coefficient bundles of one background.

    Also evaluates bundles on a complex contour so that time derivatives of
    any frame-dependent quantity can be read off analytically.
    """

    def __init__(self, background, contour_cache=4):
        self.background = background
        self.grid = background.grid
        self._contour_cache = contour_cache
        self._contours = OrderedDict()
        self._lock = threading.Lock()

    def __repr__(self):
        return f"BundleSeries({self.background!r})"

    def at(self, t):
        return CoefficientBundle(self.grid, self.background.frame(t))

    def contour(self, t0):
        """Bundles on the complex circle around t0 (memoized) and the node angles."""
        key = float(t0)
        with self._lock:
            if key in self._contours:
                return self._contours[key]
        nodes, angles = contour_nodes(key)
        entry = ([self.at(z) for z in nodes], angles)
        with self._lock:
            self._contours[key] = entry
            while len(self._contours) > self._contour_cache:
                self._contours.popitem(last=False)
        return entry

    def derivatives(self, func, t0, max_order):
        """
        Time derivatives of t -> func(bundle(t)) at a real time t0.

        Args:
            func: Callable taking a CoefficientBundle; must accept complex frames
            t0: Real time
            max_order: Highest derivative order

        Returns:
            List [value, first derivative, ..., max_order-th derivative]
        """
        values = [np.real(func(self.at(t0)))]
        if max_order < 1:
            return values
        bundles, angles = self.contour(t0)
        samples = [func(b) for b in bundles]
        return values + contour_derivatives(samples, angles, CONTOUR_RADIUS, max_order)


def boundary_radial_derivative(grid, f):
    """Second-order one-sided d_r f on the boundary ring."""
    return (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * grid.dr)


def _dot(W, df):
    return np.einsum('a...,a...->...', W, df)


def normal_potential(bundle, W, f=None, div=None):
    """
    Potential W.df with the flux-corrected boundary value d_r f * W_hat^r.

    With f omitted the analytic gradient of the bundle enthalpy is used;
    otherwise df comes from discrete partials and a one-sided boundary stencil.
    """
    grid, frame = bundle.grid, bundle.frame
    if f is None:
        df, df_r = frame.dh, bundle.dh_normal
    else:
        df, df_r = partials(grid, f), boundary_radial_derivative(grid, f)
    u = np.asarray(_dot(W, df), dtype=np.result_type(W, df, frame.kappa))
    u[-1] = df_r * corrected_normal_flux(grid, frame, W, div)
    return u


def apply_C(bundle, W):
    """
    C W = -grad(h' div(rho W)).

    On the boundary ring the argument is expanded by the product rule into
    p' div W + W.dh with the analytic enthalpy gradient, so P C W = A W holds
    to solver tolerance whenever div W vanishes there.
    """
    grid, frame = bundle.grid, bundle.frame
    u = frame.h_prime * divergence(grid, frame, frame.rho * W)
    u[-1] = frame.p_prime[-1] * divergence(grid, frame, W)[-1] + _dot(W, frame.dh)[-1]
    return -gradient(grid, frame, u)


def apply_Af(bundle, f, W):
    """
    A_f W = -P grad(W.df) for a scalar f vanishing on the boundary ring.

    Raises:
        PreconditionError: f is not zero on the boundary ring
    """
    f = np.asarray(f, dtype=float)
    scale = max(1.0, float(np.max(np.abs(f))))
    if np.max(np.abs(f[-1])) > BOUNDARY_TOL * scale:
        raise PreconditionError("A_f requires f = 0 on the boundary")
    if not np.any(f):
        return np.zeros_like(W)
    u = normal_potential(bundle, W, f=f)
    return -apply_P(bundle.grid, bundle.frame, gradient(bundle.grid, bundle.frame, u))


def apply_A(bundle, W):
    """Normal operator A W = -P grad(W.dh) using the analytic enthalpy gradient."""
    grid, frame = bundle.grid, bundle.frame
    u = normal_potential(bundle, W)
    if not np.any(u):
        return np.zeros_like(W)
    return -apply_P(grid, frame, gradient(grid, frame, u))


def apply_B(bundle, W, Wdot):
    """
    B(W, W_dot) = -g^-1 (D_t g - omega)(W_dot - sigma_dot W) + 2 sigma_dot W_dot
    + (sigma_ddot - sigma_dot^2) W.
    """
    frame = bundle.frame
    sd = frame.sigma_dot
    rel = Wdot - sd * W
    lowered = np.einsum('bc...,c...->b...', frame.dt_g - frame.omega, rel)
    return -raise_index(frame, lowered) + 2.0 * sd * Wdot + (frame.sigma_ddot - sd**2) * W


def apply_B2(bundle, W, Wdot):
    """B2(W, W_dot) = -g^-1 (g_ddot W + 2 g_dot W_dot), time derivatives taken with D_t - div V."""
    frame = bundle.frame
    lowered = (np.einsum('bc...,c...->b...', frame.g_ddot, W)
               + 2.0 * np.einsum('bc...,c...->b...', frame.g_dot, Wdot))
    return -raise_index(frame, lowered)


def apply_PB2(bundle, W1, W1dot):
    B2 = apply_B2(bundle, W1, W1dot)
    if not np.any(B2):
        return B2
    return apply_P(bundle.grid, bundle.frame, B2)


def lie_derivative(grid, T, W):
    """L_T W = T.grad W - W.grad T in Cartesian components."""
    dW, dT = vector_partials(grid, W), vector_partials(grid, T)
    return np.einsum('b...,ab...->a...', T, dW) - np.einsum('b...,ab...->a...', W, dT)


def lie_hat(grid, frame, T, W):
    """
    Modified Lie derivative L_T W + (div T) W.

    Its divergence is T(div W) + (div T) div W up to truncation error.
    """
    return lie_derivative(grid, T, W) + divergence(grid, frame, T) * W


def rotation_field(grid):
    """T = (-y2, y1); T.grad is exactly the angular derivative on the grid."""
    return np.stack([-grid.y[1], grid.y[0]])


def harmonic_gradient(grid, m):
    """grad(r^m cos(m theta)) evaluated analytically in Cartesian components."""
    z = grid.y[0] + 1j * grid.y[1]
    dz = m * z ** (m - 1)
    return np.stack([np.real(dz), -np.imag(dz)])


# ---------------------------------------------------------------------------
# Quadratic forms
# ---------------------------------------------------------------------------

def a_boundary_form(bundle, U, W):
    """
    Boundary sum that equals <U, A W> for projected U:
    sum over the ring of ell dtheta kappa (-d_r h) U_hat^r W_hat^r.
    """
    grid, frame = bundle.grid, bundle.frame
    return float(np.sum(grid.boundary_weights * frame.kappa[-1] * (-bundle.dh_normal)
                        * corrected_normal_flux(grid, frame, U)
                        * corrected_normal_flux(grid, frame, W)))


def a_surface_integral(bundle, U, W):
    """Continuum form: boundary integral of U_N W_N (-grad_N h) dS."""
    grid, frame = bundle.grid, bundle.frame
    ur, wr = radial_component(grid, U)[-1], radial_component(grid, W)[-1]
    return float(np.sum(grid.boundary_weights * frame.kappa[-1] * (-bundle.dh_normal) * ur * wr))


def a_rayleigh(bundle, W):
    """<W, A W> / <W, W> for the projection of W."""
    grid, frame = bundle.grid, bundle.frame
    W0 = apply_P(grid, frame, W)
    norm2 = inner(grid, frame, W0, W0)
    if norm2 == 0.0:
        return 0.0
    return inner(grid, frame, W0, apply_A(bundle, W0)) / norm2


@dataclass(frozen=True)
class CEnergySplit:
    total: float
    volume: float
    boundary: float


def c_energy_split(bundle, W):
    """
    <W, rho C W> against its volume term h'(div rho W)^2 kappa and boundary term
    W_N^2 (-grad_N p) dS.
    """
    grid, frame = bundle.grid, bundle.frame
    total = inner(grid, frame, W, frame.rho * apply_C(bundle, W))
    div_rw = divergence(grid, frame, frame.rho * W)
    wk = grid.weights * frame.kappa
    volume = float(np.sum(wk * frame.h_prime * div_rw**2))
    wr = radial_component(grid, W)[-1]
    boundary = float(np.sum(grid.boundary_weights * frame.kappa[-1] * wr**2
                            / frame.normal_g * frame.neg_grad_n_p))
    return CEnergySplit(total=total, volume=volume, boundary=boundary)


# ---------------------------------------------------------------------------
# Identity validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityReport:
    t: float
    divergence_commutator: float
    projection_commutator: float
    rotation_commutator: float


def hat_time_derivative(series, field_at, t, delta=IDENTITY_STEP):
    """Centred D_hat_t X = kappa^-1 d_t(kappa X) of a time-dependent grid field."""
    k_plus = series.at(t + delta).frame.kappa
    k_minus = series.at(t - delta).frame.kappa
    k0 = series.at(t).frame.kappa
    return (k_plus * field_at(t + delta) - k_minus * field_at(t - delta)) / (2.0 * delta * k0)


def _relative(residual, scale):
    return float(residual / scale) if scale > 0 else float(residual)


def divergence_commutator_residual(series, X, t, delta=IDENTITY_STEP):
    """||div(D_hat X) - D_hat(div X)|| relative to ||D_hat div X||."""
    grid = series.grid
    frame = series.at(t).frame
    div_of_hat = divergence(grid, frame, hat_time_derivative(series, X, t, delta))
    hat_of_div = hat_time_derivative(
        series, lambda s: divergence(grid, series.at(s).frame, X(s)), t, delta)
    return _relative(h_norm(grid, frame, div_of_hat - hat_of_div, 0), h_norm(grid, frame, hat_of_div, 0))


def projection_commutator_residual(series, X, t, delta=IDENTITY_STEP):
    """
    Residual of [D_hat, P] X = -P((sigma_dot - g^-1 D_t g)(I - P) X).
    """
    grid = series.grid
    frame = series.at(t).frame
    hat_PX = hat_time_derivative(series, lambda s: apply_P(grid, series.at(s).frame, X(s)), t, delta)
    P_hatX = apply_P(grid, frame, hat_time_derivative(series, X, t, delta))
    Y = project(grid, frame, X(t)).W1
    X1 = frame.sigma_dot * Y - raise_index(frame, np.einsum('bc...,c...->b...', frame.dt_g, Y))
    residual = hat_PX - P_hatX + apply_P(grid, frame, X1)
    return _relative(h_norm(grid, frame, residual, 0), h_norm(grid, frame, hat_PX, 0))


def rotation_commutator_residual(bundle, W):
    """P L_T (A W) - A (L_hat_T W) for T = d_theta on a radially symmetric bundle."""
    grid, frame = bundle.grid, bundle.frame
    T = rotation_field(grid)
    W0 = apply_P(grid, frame, W)
    lhs = apply_P(grid, frame, lie_derivative(grid, T, apply_A(bundle, W0)))
    rhs = apply_A(bundle, lie_hat(grid, frame, T, W0))
    return _relative(h_norm(grid, frame, lhs - rhs, 0), h_norm(grid, frame, rhs, 0))


def validate_identities(series, X, times, delta=IDENTITY_STEP, W=None):
    """
    Residuals of the time-derivative identities along a bundle series.

    Args:
        series: BundleSeries
        X: Callable t -> vector field (analytic test field sampled on the grid)
        times: Iterable of times
        delta: Centred-difference step for D_hat_t
        W: Field for the rotation commutator (defaults to X at each time)

    Returns:
        List of IdentityReport
    """
    reports = []
    for t in times:
        bundle = series.at(t)
        report = IdentityReport(
            t=float(t),
            divergence_commutator=divergence_commutator_residual(series, X, t, delta),
            projection_commutator=projection_commutator_residual(series, X, t, delta),
            rotation_commutator=rotation_commutator_residual(bundle, X(t) if W is None else W),
        )
        logger.debug("Identities at t=%.4g: %s", t, report)
        reports.append(report)
    return reports
