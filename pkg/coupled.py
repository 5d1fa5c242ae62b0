"""
The full linearized operator and the Picard iteration that solves it.

    L W = W_ddot + C W - B(W, W_dot),      W_dot = D_hat_t W

W is split into W0 = P W and W1 = (I - P) W. The diagonal part

    L_tilde W = (W0_ddot + A W0) + (W1_ddot - P B2(W1, W1_dot) - grad(p' div W1))

is inverted by the divergence-free solver and the divergence-form wave
solver; the remainder M_tilde = L - L_tilde is lagged, giving the sweep
L_tilde W^(k+1) = F - M_tilde W^k on a shared uniform time grid.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from disk_grid import boundary_norm, divergence, gradient, h_norm, inner, triple_norm
from divfree_solver import CG_MAX_ITER, CG_TOL, divfree_integrate
from elliptic import apply_P, project
from eos_background import taylor_check
from exceptions import ContractionError, PreconditionError, UnsupportedOrderError
from operators import apply_A, apply_B, apply_C, apply_PB2, c_energy_split
from taylor import cutoff_monomial
from wave_solver import reconstruct_W1_derivatives, series_epsilon, smooth_bump, wave_integrate

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_COMPAT_ORDER = 3
COMPAT_TOL = 1e-8
SOURCE_STEP = 1e-2


@dataclass(frozen=True)
class SplitParts:
    """W0 = P W and W1 = (I - P) W with their first two D_hat_t derivatives."""

    W0: np.ndarray
    W0_dot: np.ndarray
    W0_ddot: np.ndarray
    W1: np.ndarray
    W1_dot: np.ndarray
    W1_ddot: np.ndarray

    @property
    def W(self):
        return self.W0 + self.W1

    @property
    def W_dot(self):
        return self.W0_dot + self.W1_dot

    @property
    def W_ddot(self):
        return self.W0_ddot + self.W1_ddot


@dataclass(frozen=True)
class SolverState:
    t: float
    W: np.ndarray
    W_dot: np.ndarray
    W_ddot: np.ndarray = None
    parts: SplitParts = None


def _zero_vector(grid):
    return np.zeros((2,) + grid.shape)


def _interior_divergence(grid, frame, W):
    div = divergence(grid, frame, W)
    div[-1] = 0.0
    return div


def decompose(bundle, state):
    """
    Split a state into its projected and gradient parts.

    W1 is rebuilt from div W, div W_dot and div W_ddot through the same
    Dirichlet reconstruction the wave solver uses; W0 takes the remainder.
    """
    if state.W_ddot is None:
        raise PreconditionError("decomposition needs W_ddot")
    grid, frame = bundle.grid, bundle.frame
    divs = [_interior_divergence(grid, frame, X) for X in (state.W, state.W_dot, state.W_ddot)]
    W1, W1_dot, W1_ddot = reconstruct_W1_derivatives(bundle, *divs)
    return SplitParts(W0=state.W - W1, W0_dot=state.W_dot - W1_dot, W0_ddot=state.W_ddot - W1_ddot,
                      W1=W1, W1_dot=W1_dot, W1_ddot=W1_ddot)


def apply_L(bundle, state, t=None):
    """
    L W = W_ddot + C W - B(W, W_dot).

    Args:
        bundle: CoefficientBundle at the state time
        state: SolverState carrying W_ddot
        t: Ignored; the bundle fixes the time

    Raises:
        PreconditionError: the state has no second derivative
    """
    if state.W_ddot is None:
        raise PreconditionError("apply_L needs W_ddot from the evolution")
    if not (np.any(state.W) or np.any(state.W_dot) or np.any(state.W_ddot)):
        return np.zeros_like(state.W)
    return state.W_ddot + apply_C(bundle, state.W) - apply_B(bundle, state.W, state.W_dot)


def apply_M_tilde(bundle, W, W_dot, W1, W1_dot):
    """
    Lagged part of the splitting.

    P M W = P(B2(W1, W1_dot) - B(W, W_dot) + C W) - A W0 and
    (I - P) M W = (I - P)(C W - B(W, W_dot)) + grad(p' div W1).
    """
    grid, frame = bundle.grid, bundle.frame
    if not (np.any(W) or np.any(W_dot)):
        return np.zeros_like(W)
    B = apply_B(bundle, W, W_dot)
    CB = apply_C(bundle, W) - B
    split = project(grid, frame, CB)
    PM = apply_PB2(bundle, W1, W1_dot) + split.W0 - apply_A(bundle, W - W1)
    pressure = np.real(frame.p_prime) * _interior_divergence(grid, frame, W1)
    QM = split.W1 + gradient(grid, frame, pressure)
    return PM + QM


def apply_L_tilde(bundle, parts):
    grid, frame = bundle.grid, bundle.frame
    L0 = parts.W0_ddot + apply_A(bundle, parts.W0)
    pressure = np.real(frame.p_prime) * _interior_divergence(grid, frame, parts.W1)
    L1 = parts.W1_ddot - apply_PB2(bundle, parts.W1, parts.W1_dot) - gradient(grid, frame, pressure)
    return L0 + L1


def split_LM(bundle, state, t=None):
    """
    Return (L_tilde W, M_tilde W) with L W = L_tilde W + M_tilde W.

    The state is decomposed with decompose() unless it carries its parts.
    """
    parts = state.parts if state.parts is not None else decompose(bundle, state)
    L_tilde = apply_L_tilde(bundle, parts)
    M_tilde = apply_M_tilde(bundle, state.W, state.W_dot, parts.W1, parts.W1_dot)
    return L_tilde, M_tilde


# ---------------------------------------------------------------------------
# Compatibility series
# ---------------------------------------------------------------------------

def source_time_derivatives(F, t0, order, delta=SOURCE_STEP):
    """
    [F, F', ..., F^(order)] at t0 from five samples t0 + j delta, j = -2..2.

    The quartic interpolant is differentiated, so derivatives up to order 2
    are accurate to O(delta^2) or better.
    """
    if F is None:
        return None
    nodes = np.arange(-2, 3)
    samples = np.stack([np.asarray(F(t0 + j * delta), dtype=float) for j in nodes])
    shape = samples.shape[1:]
    coeffs = np.polynomial.polynomial.polyfit(nodes.astype(float), samples.reshape(len(nodes), -1), 4)
    return [coeffs[k].reshape(shape) * math.factorial(k) / delta**k for k in range(order + 1)]


def _sequence_derivatives(values, dt, order):
    """One-sided derivatives at the first entry of a uniformly sampled sequence."""
    out, current = [values[0]], np.stack(values)
    for _ in range(order):
        if len(current) < 3:
            out.append(np.zeros_like(values[0]))
            continue
        current = np.gradient(current, dt, axis=0, edge_order=2)
        out.append(current[0])
    return out


def _frame_operator(U, U_dot):
    """t -> kappa (B(U/kappa, U_dot/kappa) - C(U/kappa)), linear in (U, U_dot)."""
    def func(bundle):
        kappa = bundle.frame.kappa
        W, W_dot = U / kappa, U_dot / kappa
        return kappa * (apply_B(bundle, W, W_dot) - apply_C(bundle, W))
    return func


@dataclass
class CompatSeries:
    """
    Coefficients W_k = D_hat_t^k W(t0) and the cutoff sum built from them.

        W_approx(t) = kappa(t0)/kappa(t) * sum_k chi((t - t0)/eps_k) (t - t0)^k / k! W_k
    """

    coefficients: list
    boundary_residuals: list
    eps: list
    kappa0: np.ndarray
    t0: float = 0.0

    @property
    def boundary_residual(self):
        return max(self.boundary_residuals) if self.boundary_residuals else 0.0

    @property
    def is_zero(self):
        return not any(np.any(c) for c in self.coefficients)

    def evaluate(self, t, frame):
        """
        (W, D_hat W, D_hat^2 W) of the cutoff sum at time t.

        Args:
            t: Time
            frame: Background frame at t (supplies kappa)
        """
        out = [np.zeros_like(self.coefficients[0]) for _ in range(3)]
        if self.is_zero:
            return tuple(out)
        scale = self.kappa0 / np.real(frame.kappa)
        for k, (coeff, eps) in enumerate(zip(self.coefficients, self.eps)):
            c = cutoff_monomial(t - self.t0, k, eps)
            for d in range(3):
                out[d] = out[d] + c[d] * coeff
        return tuple(scale * X for X in out)


def compat_series(series, W0, W1, F=None, K=MAX_COMPAT_ORDER, t0=0.0, source_derivs=None):
    """
    Time-derivative coefficients of the solution at t0 generated by the equation.

    With U = kappa W the equation is U'' = G(t)[U, U'] + kappa F, so

        U^(k+2) = sum_j binom(k, j) G^(j)[U^(k-j), U^(k-j+1)] + (kappa F)^(k)

    where the time derivatives G^(j) of the coefficient operator are read
    off the complex contour. W_k = U^(k) / kappa(t0) for k <= K + 1.

    Args:
        series: BundleSeries
        W0, W1: Initial value and D_hat_t derivative
        F: Callable t -> vector field, or None
        K: Compatibility order (<= 3)
        t0: Initial time
        source_derivs: Precomputed [F, F', ...] at t0 (overrides F)

    Returns:
        CompatSeries

    Raises:
        UnsupportedOrderError: K outside 0..3
    """
    if K < 0 or K > MAX_COMPAT_ORDER:
        raise UnsupportedOrderError(f"compatibility order {K} not supported (K <= {MAX_COMPAT_ORDER})")
    grid = series.grid
    frame0 = series.at(t0).frame
    kappa0 = np.real(frame0.kappa)
    W0 = np.asarray(W0, dtype=float)
    W1 = np.asarray(W1, dtype=float)

    if source_derivs is None:
        source_derivs = source_time_derivatives(F, t0, max(K - 1, 0))
    n_source = max(K, 1)
    f = [np.asarray(source_derivs[k]) if source_derivs is not None and k < len(source_derivs)
         else _zero_vector(grid) for k in range(n_source)]
    kappas = series.derivatives(lambda b: b.frame.kappa, t0, max(K - 1, 0)) \
        if any(np.any(x) for x in f) else [kappa0] + [np.zeros(grid.shape)] * max(K - 1, 0)

    def kappa_f(k):
        return sum(math.comb(k, j) * kappas[j] * f[k - j] for j in range(k + 1))

    U = [kappa0 * W0, kappa0 * W1]
    for k in range(K):
        total = kappa_f(k)
        for j in range(k + 1):
            Ua, Ub = U[k - j], U[k - j + 1]
            if not (np.any(Ua) or np.any(Ub)):
                continue
            total = total + math.comb(k, j) * series.derivatives(_frame_operator(Ua, Ub), t0, j)[j]
        U.append(np.real(total))

    coefficients = [u / kappa0 for u in U]
    residuals = [float(np.max(np.abs(divergence(grid, frame0, c)[-1]))) for c in coefficients]
    eps = [series_epsilon(grid, frame0, c, k) for k, c in enumerate(coefficients)]
    logger.debug("compat series K=%d residuals=%s", K, residuals)
    return CompatSeries(coefficients=coefficients, boundary_residuals=residuals, eps=eps,
                        kappa0=kappa0, t0=float(t0))


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

@dataclass
class SweepRecord:
    iteration: int
    increment: float
    ratio: float
    cg_iters: int
    wave_steps: int
    projection_defect: float


@dataclass
class IterationReport:
    converged: bool
    tol: float
    r: int
    sweeps: list = field(default_factory=list)
    compat_residuals: list = field(default_factory=list)
    solution_residual: float = 0.0

    @property
    def iterations(self):
        return len(self.sweeps)

    @property
    def increments(self):
        return [s.increment for s in self.sweeps]

    @property
    def ratios(self):
        return [s.ratio for s in self.sweeps[1:]]

    @property
    def max_ratio(self):
        finite = [q for q in self.ratios if math.isfinite(q)]
        return max(finite) if finite else 0.0

    def to_dict(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'converged': self.converged,
            'iterations': self.iterations,
            'tol': self.tol,
            'r': self.r,
            'max_ratio': self.max_ratio,
            'solution_residual': self.solution_residual,
            'compat_residuals': list(self.compat_residuals),
            'sweeps': [asdict(s) for s in self.sweeps],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class CoupledTrajectory:
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


def _forcing_values(F, times, grid):
    if F is None:
        return [_zero_vector(grid) for _ in times]
    if callable(F):
        return [np.asarray(F(t), dtype=float) for t in times]
    return [np.asarray(x, dtype=float) for x in F]


def iteration_norm(grid, frame, parts, r):
    """
    |W|_(r,1) = |W0_dot|_r + |W0|_r + <W0>_r + |W1|_(r+1), each a triple norm.
    """
    return (triple_norm(grid, frame, [parts.W0_dot, parts.W0_ddot], r)
            + triple_norm(grid, frame, [parts.W0, parts.W0_dot, parts.W0_ddot], r)
            + boundary_norm(grid, frame, parts.W0, r)
            + triple_norm(grid, frame, [parts.W1, parts.W1_dot, parts.W1_ddot], r + 1))


def _difference(a, b):
    return SplitParts(*(x - y for x, y in zip(
        (a.W0, a.W0_dot, a.W0_ddot, a.W1, a.W1_dot, a.W1_ddot),
        (b.W0, b.W0_dot, b.W0_ddot, b.W1, b.W1_dot, b.W1_ddot))))


def _zero_parts(grid):
    zero = _zero_vector(grid)
    return SplitParts(zero, zero, zero, zero, zero, zero)


def _sweep(series, bundles, G, dt, t0, t_final, cg_tol, cg_max_iter, parallel):
    """One application of L_tilde^-1 to the source sequence G."""
    grid = series.grid
    PG = [apply_P(grid, b.frame, g) if np.any(g) else g for b, g in zip(bundles, G)]
    divG = [_interior_divergence(grid, b.frame, g) for b, g in zip(bundles, G)]
    zero_v, zero_s = _zero_vector(grid), np.zeros(grid.shape)

    def run_divfree():
        return divfree_integrate(series, zero_v, zero_v, forcing=PG, dt=dt, t_final=t_final, t0=t0,
                                 tol=cg_tol, max_iter=cg_max_iter)

    def run_wave():
        return wave_integrate(series, 'divergence', zero_s, zero_s, source=divG, dt=dt,
                              t_final=t_final, t0=t0)

    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            divfree_future = pool.submit(run_divfree)
            wave_future = pool.submit(run_wave)
            divfree_traj, wave_traj = divfree_future.result(), wave_future.result()
    else:
        divfree_traj, wave_traj = run_divfree(), run_wave()

    parts = []
    for n, bundle in enumerate(bundles):
        s0, s1 = divfree_traj.states[n], wave_traj.states[n]
        W1, W1_dot, W1_ddot = reconstruct_W1_derivatives(bundle, s1.phi, s1.hat_mass, s1.hat2_mass)
        W0_ddot = PG[n] - apply_A(bundle, s0.W0) if np.any(s0.W0) else PG[n]
        parts.append(SplitParts(W0=s0.W0, W0_dot=s0.W0dot, W0_ddot=W0_ddot,
                                W1=W1, W1_dot=W1_dot, W1_ddot=W1_ddot))
    stats = {
        'cg_iters': int(sum(s.cg_iters for s in divfree_traj.states)),
        'wave_steps': len(wave_traj.states) - 1,
        'projection_defect': float(max(s.projection_defect for s in divfree_traj.states)),
    }
    return parts, stats


def check_preconditions(series, times, compat, compat_tol=COMPAT_TOL, taylor_c0=None):
    """
    Raise PreconditionError unless the data are compatible and the Taylor
    sign condition holds at every sampled time.
    """
    if compat.boundary_residual > compat_tol:
        raise PreconditionError(
            f"compatibility residual {compat.boundary_residual:.3g} exceeds {compat_tol:.1g}")
    for t in times:
        check = taylor_check(series.at(t).frame, taylor_c0)
        if not check.passed:
            raise PreconditionError(
                f"Taylor sign condition fails at t={t:.4g} (c0 measured {check.c0_measured:.4g})")


def solve_linearized(series, F=None, data=None, dt=0.01, t_final=0.2, r=0, tol=1e-8, max_iter=30,
                     K=MAX_COMPAT_ORDER, t0=0.0, cg_tol=CG_TOL, cg_max_iter=CG_MAX_ITER,
                     parallel=False, compat_tol=COMPAT_TOL, taylor_c0=None):
    """
    Solve L W = F with W(t0) = W_0, D_hat W(t0) = W_1 by Picard sweeps.

    The compatibility series W_approx is subtracted first, leaving zero data
    and the source F - L W_approx; sweeps start from W = 0 and stop when
    sup_t |W^(k+1) - W^k|_(r,1) < tol.

    Args:
        series: BundleSeries
        F: Source (callable t -> vector field, sequence indexed by step, or None)
        data: (W_0, W_1) or None for zero data
        dt: Time step shared by both sub-solvers
        t_final: End time
        r: Order of the increment norm (0 or 1)
        tol: Stopping tolerance
        max_iter: Sweep cap
        K: Compatibility order of the subtracted series
        parallel: Run the two sub-solves of a sweep concurrently

    Returns:
        (CoupledTrajectory, IterationReport)

    Raises:
        PreconditionError: incompatible data or Taylor sign condition violated
        ContractionError: tolerance not reached within max_iter sweeps
        SolverError: a sub-solver failed
    """
    if r not in (0, 1):
        raise UnsupportedOrderError(f"iteration norm order {r} not supported (r in 0, 1)")
    grid = series.grid
    steps = int(round((t_final - t0) / dt))
    times = [t0 + n * dt for n in range(steps + 1)]
    bundles = [series.at(t) for t in times]

    if data is None:
        data = (_zero_vector(grid), _zero_vector(grid))
    F_values = _forcing_values(F, times, grid)
    if F is None or callable(F):
        source_derivs = source_time_derivatives(F, t0, max(K - 1, 0))
    else:
        source_derivs = _sequence_derivatives(F_values, dt, max(K - 1, 0))
    compat = compat_series(series, data[0], data[1], K=K, t0=t0, source_derivs=source_derivs)
    check_preconditions(series, (times[0], times[-1]), compat, compat_tol, taylor_c0)

    approx = [compat.evaluate(t, b.frame) for t, b in zip(times, bundles)]
    F_bar = []
    for t, b, Fn, (Wa, Wa_dot, Wa_ddot) in zip(times, bundles, F_values, approx):
        F_bar.append(Fn - apply_L(b, SolverState(t=t, W=Wa, W_dot=Wa_dot, W_ddot=Wa_ddot)))

    report = IterationReport(converged=False, tol=tol, r=r, compat_residuals=compat.boundary_residuals)
    current = [_zero_parts(grid) for _ in times]
    previous_increment = None
    for k in range(1, max_iter + 1):
        G = [Fb - apply_M_tilde(b, p.W, p.W_dot, p.W1, p.W1_dot)
             for b, Fb, p in zip(bundles, F_bar, current)]
        new, stats = _sweep(series, bundles, G, dt, t0, t_final, cg_tol, cg_max_iter, parallel)
        increment = max(iteration_norm(grid, b.frame, _difference(a, c), r)
                        for b, a, c in zip(bundles, new, current))
        ratio = increment / previous_increment if previous_increment else float('nan')
        report.sweeps.append(SweepRecord(iteration=k, increment=increment, ratio=ratio, **stats))
        logger.info("Sweep %d: increment %.3e ratio %.3f cg=%d", k, increment, ratio, stats['cg_iters'])
        current, previous_increment = new, increment
        if increment < tol:
            report.converged = True
            break
    else:
        raise ContractionError(
            f"Picard iteration did not reach {tol:.1g} in {max_iter} sweeps "
            f"(last increment {report.increments[-1] if report.increments else float('nan'):.3g})",
            ratios=report.ratios, increments=report.increments,
        )

    traj = CoupledTrajectory(series=series, dt=dt, forcing=F_values)
    residuals, scale = [], max(h_norm(grid, b.frame, Fn, 0) for b, Fn in zip(bundles, F_values))
    for t, b, p, (Wa, Wa_dot, Wa_ddot), Fn in zip(times, bundles, current, approx, F_values):
        state = SolverState(t=float(t), W=Wa + p.W, W_dot=Wa_dot + p.W_dot, W_ddot=Wa_ddot + p.W_ddot)
        traj.states.append(state)
        residuals.append(h_norm(grid, b.frame, apply_L(b, state) - Fn, 0))
    report.solution_residual = float(max(residuals) / scale if scale > 0 else max(residuals))
    return traj, report


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------

@dataclass
class EnergyReport:
    """Norm series of a coupled trajectory and the measured constants between them."""

    times: np.ndarray
    E_tilde: dict
    E: dict
    boundary: np.ndarray
    base_energy: np.ndarray
    base_volume: np.ndarray
    base_boundary: np.ndarray
    base_energy_constant: float
    equivalence_constant: dict
    growth_ratio: dict
    split_constant: dict
    div_lower: dict
    div_upper: dict
    trace_constant: dict

    def to_frame(self):
        data = {'t': self.times}
        for k in sorted(self.E_tilde):
            data[f'Etilde_{k}'] = self.E_tilde[k]
        for k in sorted(self.E):
            data[f'E_{k}'] = self.E[k]
        data['boundary_norm'] = self.boundary
        data['base_energy'] = self.base_energy
        return pd.DataFrame(data)

    def constants(self):
        return {
            'base_energy_constant': self.base_energy_constant,
            'equivalence_constant': self.equivalence_constant,
            'growth_ratio': self.growth_ratio,
            'split_constant': self.split_constant,
            'div_lower': self.div_lower,
            'div_upper': self.div_upper,
            'trace_constant': self.trace_constant,
        }


def _hat_derivative(kappas, fields, dt):
    """D_hat_t = kappa^-1 d_t(kappa .) along a stored sequence."""
    if len(fields) < 2:
        return [np.zeros_like(fields[0])]
    stacked = np.stack([k * X for k, X in zip(kappas, fields)])
    derivative = np.gradient(stacked, dt, axis=0)
    return [d / k for d, k in zip(derivative, kappas)]


def _time_integral(times, values):
    values = np.asarray(values)
    if len(times) < 2:
        return np.zeros_like(values)
    return np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (values[1:] + values[:-1]))])


def _ratio_max(numer, denom):
    numer, denom = np.asarray(numer), np.asarray(denom)
    mask = denom > 0
    return float(np.max(numer[mask] / denom[mask])) if np.any(mask) else 0.0


def energy_report(trajectory, F=None, r=1):
    """
    Energies of a coupled trajectory.

    E_tilde_k = |W_dot|_k + |W|_k + <W>_k + |div W|_k (triple norms) and
    E_k with plain H^k norms, for k <= r. D_hat^3 W is taken by centred
    differences of D_hat^2 W along the trajectory.

    Also measured: the base energy <W_dot, rho W_dot> + <W, rho (C + I) W>
    with its volume/boundary split and the constant in
    sqrt(E)(t) <= C (sqrt(E)(0) + int ||F||); max E_tilde / (E + |F|_(k-1));
    max E_tilde(t) / (E_tilde(0) + int |F|_k); and for k <= 1 the splitting
    constant (|W0_dot| + |W1_dot| + |W0| + |W1|) / (|W_dot| + |W|), the
    ratios ||div W||_k / ||W1||_(k+1), ||W1||_(k+1) / ||div W||_k and
    <W1>_k / ||W1||_(k+1).

    Args:
        trajectory: CoupledTrajectory
        F: Source override (defaults to the trajectory's stored forcing)
        r: Highest order (<= 2)
    """
    if r < 0 or r > 2:
        raise UnsupportedOrderError(f"energy report order {r} not supported (r <= 2)")
    series, grid, dt = trajectory.series, trajectory.grid, trajectory.dt
    times = trajectory.times
    bundles = [series.at(t) for t in times]
    kappas = [np.real(b.frame.kappa) for b in bundles]
    forcing = _forcing_values(F, times, grid) if F is not None else (
        trajectory.forcing or [_zero_vector(grid) for _ in times])

    W = [s.W for s in trajectory.states]
    W_dot = [s.W_dot for s in trajectory.states]
    W_ddot = [s.W_ddot if s.W_ddot is not None else np.zeros_like(s.W) for s in trajectory.states]
    W_dddot = _hat_derivative(kappas, W_ddot, dt)
    F_dot = _hat_derivative(kappas, forcing, dt)

    orders = range(r + 1)
    split_orders = range(min(r, 1) + 1)
    E_tilde = {k: [] for k in orders}
    E = {k: [] for k in orders}
    F_triple = {k: [] for k in orders}
    F_lower = {k: [] for k in orders}
    split = {k: [] for k in split_orders}
    div_lower = {k: [] for k in split_orders}
    div_upper = {k: [] for k in split_orders}
    trace = {k: [] for k in split_orders}
    boundary, base, base_volume, base_boundary, f_norm = [], [], [], [], []

    for n, bundle in enumerate(bundles):
        frame = bundle.frame
        fields = [W[n], W_dot[n], W_ddot[n]]
        dot_fields = [W_dot[n], W_ddot[n], W_dddot[n]]
        div_fields = [_interior_divergence(grid, frame, X) for X in fields]
        f_fields = [forcing[n], F_dot[n]]
        active = any(np.any(X) for X in fields)
        boundary.append(boundary_norm(grid, frame, W[n], 0))
        f_norm.append(h_norm(grid, frame, forcing[n], 0))

        if active:
            energy = c_energy_split(bundle, W[n])
            rho = np.real(frame.rho)
            kinetic = inner(grid, frame, W_dot[n], rho * W_dot[n])
            mass = inner(grid, frame, W[n], rho * W[n])
            base.append(kinetic + energy.total + mass)
            base_volume.append(energy.volume)
            base_boundary.append(energy.boundary)
        else:
            base.append(0.0)
            base_volume.append(0.0)
            base_boundary.append(0.0)

        for k in orders:
            bnorm = boundary_norm(grid, frame, W[n], k)
            E_tilde[k].append(triple_norm(grid, frame, dot_fields, k) + triple_norm(grid, frame, fields, k)
                              + bnorm + triple_norm(grid, frame, div_fields, k))
            E[k].append(h_norm(grid, frame, W_dot[n], k) + h_norm(grid, frame, W[n], k)
                        + bnorm + h_norm(grid, frame, div_fields[0], k))
            F_triple[k].append(triple_norm(grid, frame, f_fields, k))
            F_lower[k].append(triple_norm(grid, frame, f_fields, k - 1) if k >= 1 else 0.0)

        if not active:
            for k in split_orders:
                for series_k in (split, div_lower, div_upper, trace):
                    series_k[k].append(0.0)
            continue
        parts = decompose(bundle, SolverState(t=float(times[n]), W=W[n], W_dot=W_dot[n], W_ddot=W_ddot[n]))
        for k in split_orders:
            whole = triple_norm(grid, frame, fields[:2], k) + triple_norm(grid, frame, dot_fields[:2], k)
            pieces = (triple_norm(grid, frame, [parts.W0, parts.W0_dot], k)
                      + triple_norm(grid, frame, [parts.W1, parts.W1_dot], k)
                      + triple_norm(grid, frame, [parts.W0_dot, parts.W0_ddot], k)
                      + triple_norm(grid, frame, [parts.W1_dot, parts.W1_ddot], k))
            split[k].append(pieces / whole if whole > 0 else 0.0)
            div_k = h_norm(grid, frame, div_fields[0], k)
            w1_k = h_norm(grid, frame, parts.W1, k + 1)
            div_lower[k].append(div_k / w1_k if w1_k > 0 else 0.0)
            div_upper[k].append(w1_k / div_k if div_k > 0 else 0.0)
            trace[k].append(boundary_norm(grid, frame, parts.W1, k) / w1_k if w1_k > 0 else 0.0)

    base = np.array(base)
    root = np.sqrt(np.maximum(base, 0.0))
    base_constant = _ratio_max(root, root[0] + _time_integral(times, f_norm))

    E_tilde = {k: np.array(v) for k, v in E_tilde.items()}
    E = {k: np.array(v) for k, v in E.items()}
    equivalence = {k: _ratio_max(E_tilde[k], E[k] + np.array(F_lower[k])) for k in orders}
    growth = {k: _ratio_max(E_tilde[k], E_tilde[k][0] + _time_integral(times, F_triple[k])) for k in orders}

    def peak(values):
        return {k: float(np.max(v)) if v else 0.0 for k, v in values.items()}

    return EnergyReport(
        times=times, E_tilde=E_tilde, E=E, boundary=np.array(boundary),
        base_energy=base, base_volume=np.array(base_volume), base_boundary=np.array(base_boundary),
        base_energy_constant=base_constant, equivalence_constant=equivalence, growth_ratio=growth,
        split_constant=peak(split), div_lower=peak(div_lower), div_upper=peak(div_upper),
        trace_constant=peak(trace),
    )


# ---------------------------------------------------------------------------
# Manufactured solutions
# ---------------------------------------------------------------------------

class ManufacturedSolution:
    """
    W*(t, y) = T(t) Phi(y) with Phi supported in |y| < support and
    T(t) = cos t + t, so every compatibility coefficient vanishes near the
    boundary. D_hat derivatives are exact: D_hat W* = (kappa_dot/kappa T + T') Phi.
    """

    def __init__(self, series, amplitude=1.0, support=0.7):
        self.series = series
        grid = series.grid
        bump = smooth_bump(grid, support)
        y1, y2 = grid.y
        self.profile = amplitude * bump * np.stack([1.0 + y2, y1 * y2])

    @staticmethod
    def time_factor(t):
        return math.cos(t) + t, 1.0 - math.sin(t), -math.cos(t)

    def state(self, t):
        frame = self.series.at(t).frame
        kappa = np.real(frame.kappa)
        s1 = np.real(frame.kappa_dot) / kappa
        s2 = np.real(frame.kappa_ddot) / kappa
        T, T1, T2 = self.time_factor(t)
        return SolverState(t=float(t), W=T * self.profile, W_dot=(s1 * T + T1) * self.profile,
                           W_ddot=(s2 * T + 2.0 * s1 * T1 + T2) * self.profile)

    def data(self, t0=0.0):
        state = self.state(t0)
        return state.W, state.W_dot

    def forcing(self, t):
        """F = L W* evaluated with the discrete operators."""
        return apply_L(self.series.at(t), self.state(t))

    def error(self, trajectory):
        """sup over stored times of max |W - W*|."""
        return float(max(np.max(np.abs(s.W - self.state(s.t).W)) for s in trajectory.states))
