"""
Divergence-free evolution D_hat_t^2 W0 + A W0 = F0 on projected fields.

Unknowns are W = W0 and V = D_hat_t W0. In grid-frame time derivatives

    d_t W = V - sigma_dot W
    d_t V = -A W + F0 - sigma_dot V

which is advanced with the implicit midpoint rule. Writing tau = dt/2, s the
midpoint sigma_dot and a the midpoint value of W, each step solves

    P[(1 + tau s)^2 a] + tau^2 A a = P[tau V^n + (1 + tau s) W^n + tau^2 F_bar]

by matrix-free conjugate gradients in the kappa-weighted inner product, then
re-projects at the new time level.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from disk_grid import boundary_norm, h_norm, inner, triple_norm
from elliptic import apply_P, projection_defect
from exceptions import SolverError, UnsupportedOrderError
from operators import apply_A

logger = logging.getLogger(__name__)

CG_TOL = 1e-10
CG_MAX_ITER = 500


class ConjugateGradient:
    """
    Conjugate gradients for a symmetric positive definite operator given as a callable.

    Vectors are grid fields; the inner product is passed in so that the
    operator only needs to be symmetric in that product.
    """

    def __init__(self, operator, inner_product, tol=CG_TOL, max_iter=CG_MAX_ITER):
        """
        Args:
            operator: Callable field -> field
            inner_product: Callable (field, field) -> float
            tol: Relative residual tolerance
            max_iter: Iteration cap
        """
        self.operator = operator
        self.inner_product = inner_product
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0
        self.residual = None

    def solve(self, b, x0=None):
        xk = np.zeros_like(b) if x0 is None else np.array(x0, copy=True)
        b_norm = math.sqrt(max(self.inner_product(b, b), 0.0))
        if b_norm == 0.0:
            self.iterations, self.residual = 0, 0.0
            return np.zeros_like(b)

        rk = b - self.operator(xk)
        dk = rk
        rr = self.inner_product(rk, rk)
        k = 0
        while math.sqrt(max(rr, 0.0)) > self.tol * b_norm and k < self.max_iter:
            Adk = self.operator(dk)
            alpha = rr / self.inner_product(dk, Adk)
            xk = xk + alpha * dk
            rk = rk - alpha * Adk
            rr_next = self.inner_product(rk, rk)
            dk = rk + (rr_next / rr) * dk
            rr = rr_next
            k += 1

        self.iterations = k
        self.residual = math.sqrt(max(rr, 0.0)) / b_norm
        if self.residual > self.tol:
            raise SolverError(
                f"CG did not converge in {k} iterations (relative residual {self.residual:.3g})",
                residual=self.residual, iterations=k,
            )
        return xk


@dataclass(frozen=True)
class DivFreeState:
    t: float
    W0: np.ndarray
    W0dot: np.ndarray
    projection_defect: float = 0.0
    cg_iters: int = 0


@dataclass
class DivFreeTrajectory:
    series: object
    dt: float
    states: list = field(default_factory=list)
    forcing: list = field(default_factory=list)

    @property
    def grid(self):
        return self.series.grid

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)

    def forcing_at(self, n):
        if not self.forcing:
            return np.zeros((2,) + self.grid.shape)
        return self.forcing[n]


def _forcing_value(forcing, n, t, grid):
    if forcing is None:
        return np.zeros((2,) + grid.shape)
    if callable(forcing):
        return np.asarray(forcing(t), dtype=float)
    return np.asarray(forcing[n], dtype=float)


def midpoint_step(bundle_mid, bundle_next, W, V, F_bar, dt, tol=CG_TOL, max_iter=CG_MAX_ITER):
    """
    One implicit-midpoint step.

    Returns:
        (W_next, V_next, cg_iterations, projection_defect before re-projection)
    """
    grid, frame = bundle_mid.grid, bundle_mid.frame
    tau = 0.5 * dt
    s = np.real(frame.sigma_dot)
    m = 1.0 + tau * s

    def operator(a):
        return apply_P(grid, frame, m**2 * a) + tau**2 * apply_A(bundle_mid, a)

    rhs = apply_P(grid, frame, tau * V + m * W + tau**2 * F_bar)
    solver = ConjugateGradient(operator, lambda x, y: inner(grid, frame, x, y), tol, max_iter)
    a = solver.solve(rhs, x0=apply_P(grid, frame, W))
    b = (m * a - W) / tau

    W_next = 2.0 * a - W
    V_next = 2.0 * b - V
    next_grid, next_frame = bundle_next.grid, bundle_next.frame
    defect = projection_defect(next_grid, next_frame, W_next)
    W_next = apply_P(next_grid, next_frame, W_next)
    V_next = apply_P(next_grid, next_frame, V_next)
    return W_next, V_next, solver.iterations, defect


def divfree_integrate(series, W0, W0dot, forcing=None, dt=0.002, t_final=0.2, t0=0.0,
                      tol=CG_TOL, max_iter=CG_MAX_ITER):
    """
    Integrate the divergence-free evolution on a uniform time grid.

    Args:
        series: BundleSeries
        W0, W0dot: Initial projected field and its D_hat_t derivative
        forcing: None, callable t -> projected field, or sequence indexed by step
        dt: Time step (negative steps integrate backwards)
        t_final: End time
        t0: Start time
        tol: CG relative tolerance
        max_iter: CG iteration cap

    Returns:
        DivFreeTrajectory

    Raises:
        SolverError: CG did not converge
    """
    grid = series.grid
    steps = int(round((t_final - t0) / dt))
    bundle = series.at(t0)
    W = apply_P(grid, bundle.frame, np.asarray(W0, dtype=float))
    V = apply_P(grid, bundle.frame, np.asarray(W0dot, dtype=float))

    traj = DivFreeTrajectory(series=series, dt=dt)
    F = _forcing_value(forcing, 0, t0, grid)
    if forcing is not None:
        traj.forcing.append(F)
    traj.states.append(DivFreeState(t=float(t0), W0=W, W0dot=V))

    for n in range(1, steps + 1):
        t = t0 + n * dt
        F_next = _forcing_value(forcing, n, t, grid)
        if forcing is not None:
            traj.forcing.append(F_next)
        if not (np.any(W) or np.any(V) or np.any(F) or np.any(F_next)):
            W, V, iters, defect = np.zeros_like(W), np.zeros_like(V), 0, 0.0
        else:
            W, V, iters, defect = midpoint_step(
                series.at(t - 0.5 * dt), series.at(t), W, V, 0.5 * (F + F_next), dt, tol, max_iter)
        traj.states.append(DivFreeState(t=float(t), W0=W, W0dot=V, projection_defect=defect,
                                        cg_iters=iters))
        logger.debug("divfree step %d t=%.4g cg=%d defect=%.2e", n, t, iters, defect)
        F = F_next
    return traj


def conserved_energy(bundle, W, V):
    """<V, V> + <W, A W>, conserved by the scheme on static coefficients."""
    grid, frame = bundle.grid, bundle.frame
    return inner(grid, frame, V, V) + inner(grid, frame, W, apply_A(bundle, W))


def full_energy(bundle, W, V):
    """<V, V> + <W, (A + I) W>."""
    return conserved_energy(bundle, W, V) + inner(bundle.grid, bundle.frame, W, W)


@dataclass
class DivFreeEnergy:
    times: np.ndarray
    E0: dict
    E0_tilde: dict
    boundary: np.ndarray
    conserved: np.ndarray
    full: np.ndarray
    projection_defect: np.ndarray
    cg_iters: np.ndarray
    growth_constant: dict
    derivative_ratio: dict

    def to_frame(self):
        return pd.DataFrame({
            't': self.times,
            'E00': self.E0.get(0, np.zeros(len(self.times))),
            'E01': self.E0.get(1, np.full(len(self.times), np.nan)),
            'boundary_norm': self.boundary,
            'projection_defect': self.projection_defect,
            'cg_iters': self.cg_iters,
        })


def divfree_energy(trajectory, r=1):
    """
    Energy series of a divergence-free trajectory.

    E0r = ||V||_r + ||W||_r + <W>_r and the triple-norm version with
    D_hat W = V, D_hat V = -A W + F. Also reported: the constant in
    E0r(t) <= C (E0r(0) + int ||F||_r) and the ratio
    (|||V|||_r + |||W|||_r) / (E0r + |||F|||_(r-1)).
    """
    if r < 0 or r > 1:
        raise UnsupportedOrderError(f"divergence-free energy order {r} not supported (r <= 1)")
    series, grid = trajectory.series, trajectory.grid
    E0 = {k: [] for k in range(r + 1)}
    E0t = {k: [] for k in range(r + 1)}
    f_norms = {k: [] for k in range(r + 1)}
    ratios = {k: [] for k in range(r + 1)}
    boundary, conserved, full = [], [], []

    for n, state in enumerate(trajectory.states):
        bundle = series.at(state.t)
        frame = bundle.frame
        W, V = state.W0, state.W0dot
        F = trajectory.forcing_at(n)
        has_data = np.any(W) or np.any(V)
        AW = apply_A(bundle, W) if has_data else np.zeros_like(W)
        Vdot = -AW + F
        conserved.append(inner(grid, frame, V, V) + inner(grid, frame, W, AW))
        full.append(conserved[-1] + inner(grid, frame, W, W))
        boundary.append(boundary_norm(grid, frame, W, 0))
        for k in range(r + 1):
            bnorm = boundary_norm(grid, frame, W, k)
            e = h_norm(grid, frame, V, k) + h_norm(grid, frame, W, k) + bnorm
            et = triple_norm(grid, frame, [V, Vdot], k) + triple_norm(grid, frame, [W, V], k) + bnorm
            E0[k].append(e)
            E0t[k].append(et)
            f_norms[k].append(h_norm(grid, frame, F, k))
            f_lower = triple_norm(grid, frame, [F], k - 1) if k >= 1 else 0.0
            denom = e + f_lower
            ratios[k].append((et - bnorm) / denom if denom > 0 else 0.0)

    times = trajectory.times
    growth = {}
    for k in E0:
        series_k = np.array(E0[k])
        if len(times) > 1 and series_k[0] + np.any(f_norms[k]) > 0:
            forcing_integral = np.concatenate(
                [[0.0], np.cumsum(0.5 * np.diff(times) * (np.array(f_norms[k][1:]) + np.array(f_norms[k][:-1])))])
            bound = series_k[0] + np.abs(forcing_integral)
            mask = bound > 0.0
            growth[k] = float(np.max(series_k[mask] / bound[mask]))
        else:
            growth[k] = 0.0
    return DivFreeEnergy(
        times=times,
        E0={k: np.array(v) for k, v in E0.items()},
        E0_tilde={k: np.array(v) for k, v in E0t.items()},
        boundary=np.array(boundary),
        conserved=np.array(conserved),
        full=np.array(full),
        projection_defect=np.array([s.projection_defect for s in trajectory.states]),
        cg_iters=np.array([s.cg_iters for s in trajectory.states]),
        growth_constant=growth,
        derivative_ratio={k: float(np.max(v)) if v else 0.0 for k, v in ratios.items()},
    )


def measure_frequency(trajectory):
    """
    Angular frequency of an eigenmode run from the first zero of <W(t), W(0)>.

    The crossing time is located by linear interpolation; omega = pi / (2 t*).
    """
    grid = trajectory.grid
    first = trajectory.states[0]
    frame0 = trajectory.series.at(first.t).frame
    corr = np.array([inner(grid, frame0, s.W0, first.W0) for s in trajectory.states])
    times = trajectory.times
    for n in range(1, len(corr)):
        if corr[n - 1] > 0.0 >= corr[n]:
            frac = corr[n - 1] / (corr[n - 1] - corr[n])
            t_star = times[n - 1] + frac * (times[n] - times[n - 1]) - times[0]
            return math.pi / (2.0 * t_star)
    logger.warning("No zero crossing of <W(t), W(0)> before t=%.4g; frequency undefined", times[-1])
    return float('nan')
