"""
Invariant suites and refinement studies run by the `validate` and `converge` commands.

Each suite returns a list of Check rows; a run passes when every row passes.
Random test fields come from numpy generators seeded with (seed, suite index)
so that a suite's fields do not depend on which other suites ran.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from coupled import ManufacturedSolution, SolverState, apply_L, solve_linearized, split_LM
from disk_grid import (DiskGrid, clear_boundary_divergence, divergence, divergence_boundary_term, flat_metric,
                       gradient, h_norm, inner, random_polynomial, random_smooth_field, scalar_inner)
from divfree_solver import conserved_energy as divfree_conserved_energy
from divfree_solver import divfree_integrate, measure_frequency
from elliptic import (apply_P, bessel_eigenvalue_error, bessel_zero, continuity_constants, observed_order,
                      poisson_error, project)
from eos_background import (Background, EquationOfState, PrescribedHFlow, euler_residual, make_flow,
                            nonlinear_energy, taylor_check)
from operators import (BundleSeries, a_rayleigh, apply_A, apply_C, divergence_commutator_residual,
                       harmonic_gradient, projection_commutator_residual, rotation_commutator_residual)
from wave_solver import bessel_mode, wave_integrate
from wave_solver import conserved_energy as wave_conserved_energy

logger = logging.getLogger(__name__)

SUITES = ('eos', 'grid', 'elliptic', 'projection', 'operators', 'splitting', 'evolution')
STUDIES = ('poisson', 'dirichlet_eigenvalue', 'a_eigenmode', 'bessel_wave', 'mms')

PROJECTION_FIELDS = 50
RAYLEIGH_FIELDS = 20
EIGEN_MODES = (1, 2, 3, 4)
EIGEN_TOL = 0.01
EVOLUTION_STEPS_PER_PERIOD = 500
EVOLUTION_FRACTION = 0.3
IDENTITY_TIMES = (0.05, 0.1)

MIN_ORDER = {study: 1.9 for study in STUDIES}


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    threshold: float
    bound: str = '<='
    passed: bool = True


def make_check(suite, name, value, threshold, bound='<='):
    value = float(value)
    if bound == '<=':
        passed = value <= threshold
    elif bound == '>=':
        passed = value >= threshold
    else:
        passed = True
    return Check(suite=suite, name=name, value=value, threshold=float(threshold), bound=bound,
                 passed=bool(passed and math.isfinite(value)) if bound != 'info' else True)


def info(suite, name, value):
    """A measured value reported without a pass/fail threshold."""
    return make_check(suite, name, value, float('nan'), bound='info')


def checks_frame(checks):
    return pd.DataFrame([asdict(c) for c in checks],
                        columns=['suite', 'name', 'value', 'threshold', 'bound', 'passed'])


def _relative(a, b):
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def _field_relative(grid, frame, X, reference):
    scale = h_norm(grid, frame, reference, 0)
    residual = h_norm(grid, frame, X - reference, 0)
    return residual / scale if scale > 0 else residual


def eigen_c0(background_config):
    """Enthalpy slope used by the eigenmode oracles."""
    if background_config.family == 'prescribed_h' and background_config.c0 != 0.0:
        return background_config.c0
    return 1.0


def build_series(config, grid=None, cache_size=64):
    """Grid, equation of state and background of a run configuration as a BundleSeries."""
    bg, eos_cfg = config.background, config.eos
    grid = grid or DiskGrid(config.grid.n_r, config.grid.n_theta)
    eos = EquationOfState(eos_cfg.gamma, eos_cfg.K, eos_cfg.rho_bar0)
    flow = make_flow(bg.family, alpha=bg.alpha, beta=bg.beta, omega=bg.omega,
                     velocity=(bg.velocity_x, bg.velocity_y), angular_speed=bg.angular_speed, c0=bg.c0)
    return BundleSeries(Background(flow, eos, grid, cache_size=cache_size))


def flat_series(grid, c0=1.0, eos=None):
    return BundleSeries(Background(PrescribedHFlow(c0), eos or EquationOfState(), grid))


class SuiteContext:
    """Objects shared by the suites of one validate run."""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = int(seed)
        self.series = build_series(config)
        self.grid = self.series.grid
        self.eos = self.series.background.eos
        self.flow = self.series.background.flow
        taylor_c0 = config.background.taylor_c0
        self.taylor_c0 = taylor_c0 if taylor_c0 > 0 else None

    def rng(self, suite):
        return np.random.default_rng([self.seed, SUITES.index(suite)])

    def bundle(self, t=0.0):
        return self.series.at(t)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def eos_suite(ctx):
    eos, grid = ctx.eos, ctx.grid
    suite = 'eos'
    rho = np.linspace(eos.rho_bar0, 2.0 * eos.rho_bar0, 33)
    checks = [
        make_check(suite, 'p(rho_bar0)', abs(eos.pressure(eos.rho_bar0)), 1e-14),
        make_check(suite, 'h(rho_bar0)', abs(eos.enthalpy(eos.rho_bar0)), 1e-14),
        make_check(suite, "p' - h' rho", float(np.max(np.abs(eos.dp(rho) - eos.dh(rho) * rho))), 1e-12),
    ]

    det_err, inv_err = 0.0, 0.0
    eye = np.zeros((2, 2) + grid.shape)
    eye[0, 0] = eye[1, 1] = 1.0
    for t in (0.0,) + IDENTITY_TIMES:
        frame = ctx.bundle(t).frame
        g = np.real(frame.g)
        kappa2 = np.real(frame.kappa) ** 2
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        det_err = max(det_err, float(np.max(np.abs(det - kappa2)) / np.max(kappa2)))
        product = np.einsum('ab...,bc...->ac...', g, np.real(frame.g_inv))
        inv_err = max(inv_err, float(np.max(np.abs(product - eye))))
    checks.append(make_check(suite, 'det g = kappa^2', det_err, 1e-10))
    checks.append(make_check(suite, 'g g^-1 = I', inv_err, 1e-12))

    translation = make_flow('translation', velocity=(ctx.config.background.velocity_x,
                                                     ctx.config.background.velocity_y))
    E0 = nonlinear_energy(translation, eos, 0.0, grid)
    E1 = nonlinear_energy(translation, eos, 1.0, grid)
    checks.append(make_check(suite, 'nonlinear energy (translation)', _relative(E0, E1), 1e-10))
    for family in ('static', 'translation'):
        residual = float(np.max(euler_residual(make_flow(family), eos, 0.5, grid)))
        checks.append(make_check(suite, f'euler residual ({family})', residual, 1e-12))
    if ctx.flow.euler_exact:
        residual = float(np.max(euler_residual(ctx.flow, eos, 0.5, grid)))
        checks.append(make_check(suite, f'euler residual ({ctx.flow.family})', residual, 1e-10))
    return checks


def grid_suite(ctx):
    grid, frame = ctx.grid, ctx.bundle().frame
    rng = ctx.rng('grid')
    suite = 'grid'
    sbp = 0.0
    for _ in range(10):
        q = random_polynomial(grid, rng)
        W = random_smooth_field(grid, rng)
        lhs = inner(grid, frame, gradient(grid, frame, q), W) + scalar_inner(grid, frame, q, divergence(grid, frame, W))
        rhs = divergence_boundary_term(grid, frame, q, W)
        sbp = max(sbp, abs(lhs - rhs) / max(1.0, abs(rhs)))

    flat = flat_metric(grid)
    a, b, c = rng.standard_normal(3)
    q = a + b * grid.y[0] + c * grid.y[1]
    grad = gradient(grid, flat, q)
    linear = float(max(np.max(np.abs(grad[0] - b)), np.max(np.abs(grad[1] - c))))
    return [
        make_check(suite, 'divergence theorem', sbp, 1e-10),
        make_check(suite, 'gradient of linear function', linear, 1e-12),
    ]


def elliptic_suite(ctx):
    grid = ctx.grid
    flat = flat_metric(grid)
    return [
        make_check('elliptic', 'poisson max error', poisson_error(grid, flat), grid.dr),
        make_check('elliptic', 'dirichlet eigenvalue (relative)', bessel_eigenvalue_error(grid, flat), 0.01),
    ]


def projection_suite(ctx):
    grid, frame = ctx.grid, ctx.bundle().frame
    rng = ctx.rng('projection')
    idempotence, orthogonality = 0.0, 0.0
    const_P, const_Q = [], []
    for _ in range(PROJECTION_FIELDS):
        U = random_smooth_field(grid, rng)
        split = project(grid, frame, U)
        PU = split.W0
        idempotence = max(idempotence, _field_relative(grid, frame, apply_P(grid, frame, PU), PU))
        n0, n1 = h_norm(grid, frame, PU, 0), h_norm(grid, frame, split.W1, 0)
        if n0 > 0 and n1 > 0:
            orthogonality = max(orthogonality, abs(inner(grid, frame, PU, split.W1)) / (n0 * n1))
        constants = continuity_constants(grid, frame, U, r=1)
        const_P.append(constants['P'])
        const_Q.append(constants['I-P'])
    return [
        make_check('projection', 'idempotence', idempotence, 1e-8),
        make_check('projection', 'orthogonality', orthogonality, 1e-8),
        info('projection', 'continuity constant |PU|_1/|U|_1', max(const_P)),
        info('projection', 'continuity constant |(I-P)U|_1/|div U|_0', max(const_Q)),
    ]


def operators_suite(ctx):
    grid, bundle = ctx.grid, ctx.bundle()
    frame = bundle.frame
    rng = ctx.rng('operators')
    suite = 'operators'
    checks = []

    U = apply_P(grid, frame, random_smooth_field(grid, rng))
    W = apply_P(grid, frame, random_smooth_field(grid, rng))
    checks.append(make_check(suite, 'A symmetry', _relative(inner(grid, frame, U, apply_A(bundle, W)),
                                                            inner(grid, frame, apply_A(bundle, U), W)), 1e-10))

    static = BundleSeries(Background(make_flow('static'), ctx.eos, grid)).at(0.0)
    sframe = static.frame
    U, W = (clear_boundary_divergence(grid, sframe, random_smooth_field(grid, rng)) for _ in range(2))
    checks.append(make_check(suite, 'C symmetry (static)', _relative(inner(grid, sframe, U, apply_C(static, W)),
                                                                     inner(grid, sframe, apply_C(static, U), W)),
                             1e-10))

    taylor = taylor_check(frame, ctx.taylor_c0)
    fields = [random_smooth_field(grid, rng) for _ in range(RAYLEIGH_FIELDS)]
    fields += [harmonic_gradient(grid, m) for m in EIGEN_MODES]
    rayleigh = min(a_rayleigh(bundle, X) for X in fields)
    checks.append(info(suite, 'Taylor c0 measured', taylor.c0_measured))
    if not taylor.passed:
        logger.warning("Taylor sign condition fails (c0 measured %.4g)", taylor.c0_measured)
    checks.append(make_check(suite, 'min Rayleigh quotient of A', rayleigh, -1e-8, bound='>='))

    c0 = eigen_c0(ctx.config.background)
    flat = flat_series(grid, c0, ctx.eos).at(0.0)
    for m in EIGEN_MODES:
        value = a_rayleigh(flat, harmonic_gradient(grid, m))
        checks.append(make_check(suite, f'A eigenvalue m={m} (relative to c0 m)', _relative(value, c0 * m),
                                 EIGEN_TOL))

    series = ctx.series
    div_res, proj_res = 0.0, 0.0
    profile = random_smooth_field(grid, rng)

    def X(t):
        return (1.0 + t + t**2) * profile

    for t in IDENTITY_TIMES:
        div_res = max(div_res, divergence_commutator_residual(series, X, t))
        proj_res = max(proj_res, projection_commutator_residual(series, X, t))
    checks.append(make_check(suite, 'divergence commutator', div_res, 1e-8))
    checks.append(make_check(suite, 'projection commutator', proj_res, 1e-4))
    checks.append(make_check(suite, 'rotation commutator (flat)',
                             rotation_commutator_residual(flat, random_smooth_field(grid, rng)), 1e-6))
    return checks


def splitting_suite(ctx):
    grid, bundle = ctx.grid, ctx.bundle()
    frame = bundle.frame
    rng = ctx.rng('splitting')
    state = SolverState(t=0.0, W=random_smooth_field(grid, rng), W_dot=random_smooth_field(grid, rng),
                        W_ddot=random_smooth_field(grid, rng))
    LW = apply_L(bundle, state)
    L_tilde, M_tilde = split_LM(bundle, state)
    W = clear_boundary_divergence(grid, frame, random_smooth_field(grid, rng))
    return [
        make_check('splitting', 'L = L_tilde + M_tilde', _field_relative(grid, frame, L_tilde + M_tilde, LW), 1e-8),
        make_check('splitting', 'P C W = A W',
                   _field_relative(grid, frame, apply_P(grid, frame, apply_C(bundle, W)), apply_A(bundle, W)),
                   1e-9),
    ]


def evolution_suite(ctx):
    grid = ctx.grid
    c0 = abs(eigen_c0(ctx.config.background))
    series = flat_series(grid, c0, ctx.eos)
    bundle = series.at(0.0)
    checks = []

    j01 = bessel_zero()
    period = 2.0 * math.pi / j01
    dt = period / EVOLUTION_STEPS_PER_PERIOD
    steps = int(EVOLUTION_FRACTION * EVOLUTION_STEPS_PER_PERIOD)
    traj = wave_integrate(series, 'scalar', bessel_mode(grid, j01), np.zeros(grid.shape), dt=dt,
                          t_final=steps * dt)
    energies = np.array([wave_conserved_energy(bundle, 'scalar', s) for s in traj.states])
    checks.append(make_check('evolution', 'wave energy drift',
                             float(np.max(np.abs(energies - energies[0])) / energies[0]), 1e-6))

    m = 2
    omega = math.sqrt(c0 * m)
    dt = 2.0 * math.pi / omega / EVOLUTION_STEPS_PER_PERIOD
    W0 = harmonic_gradient(grid, m)
    dtraj = divfree_integrate(series, W0, np.zeros_like(W0), dt=dt, t_final=steps * dt)
    energies = np.array([divfree_conserved_energy(bundle, s.W0, s.W0dot) for s in dtraj.states])
    checks.append(make_check('evolution', 'divergence-free energy drift',
                             float(np.max(np.abs(energies - energies[0])) / energies[0]), 1e-6))
    checks.append(make_check('evolution', 'projection defect',
                             max(s.projection_defect for s in dtraj.states), 1e-8))
    frequency = measure_frequency(dtraj)
    checks.append(make_check('evolution', 'eigenmode frequency (relative to sqrt(c0 m))',
                             abs(frequency - omega) / omega, 0.01))
    return checks


SUITE_FUNCTIONS = {
    'eos': eos_suite,
    'grid': grid_suite,
    'elliptic': elliptic_suite,
    'projection': projection_suite,
    'operators': operators_suite,
    'splitting': splitting_suite,
    'evolution': evolution_suite,
}


def run_suites(config, seed=0, suites=SUITES):
    """
    Run the named suites on one configuration.

    Returns:
        List of Check
    """
    ctx = SuiteContext(config, seed)
    checks = []
    for name in suites:
        logger.info("Running %s suite", name)
        results = SUITE_FUNCTIONS[name](ctx)
        for check in results:
            logger.debug("%s", check)
        checks.extend(results)
    return checks


# ---------------------------------------------------------------------------
# Refinement studies
# ---------------------------------------------------------------------------

def bessel_wave_error(grid, dt):
    """Max error of the scalar wave solve of the Bessel standing mode over one period."""
    j01 = bessel_zero()
    series = flat_series(grid)
    period = 2.0 * math.pi / j01
    steps = max(int(round(period / dt)), 1)
    dt = period / steps
    mode = bessel_mode(grid, j01)
    traj = wave_integrate(series, 'scalar', mode, np.zeros(grid.shape), dt=dt, t_final=period)
    return float(max(np.max(np.abs(s.phi - math.cos(j01 * s.t) * mode)) for s in traj.states))


def a_eigenmode_error(grid, c0=1.0, m=2):
    bundle = flat_series(grid, c0).at(0.0)
    return _relative(a_rayleigh(bundle, harmonic_gradient(grid, m)), c0 * m)


def mms_error(config, grid, dt):
    """Max error of the coupled solve against the manufactured solution, None if Taylor fails."""
    g, it, bg = config.grid, config.iteration, config.background
    steps = int(round(g.t_final / dt))
    series = build_series(config, grid=grid, cache_size=4 * (steps + 1) + 16)
    if not taylor_check(series.at(0.0).frame, bg.taylor_c0 or None).passed:
        return None
    mms = ManufacturedSolution(series, amplitude=config.scenario.amplitude)
    traj, _ = solve_linearized(series, F=mms.forcing, data=mms.data(0.0), dt=dt, t_final=steps * dt, r=it.r,
                               tol=it.tol, max_iter=it.max_iter, K=config.scenario.order, cg_tol=it.cg_tol,
                               cg_max_iter=it.cg_max_iter, taylor_c0=bg.taylor_c0 or None)
    return mms.error(traj)


def level_errors(config, level):
    """Errors of every study on one refinement level (n_r, n_theta, dt)."""
    n_r, n_theta, dt = level
    grid = DiskGrid(n_r, n_theta)
    flat = flat_metric(grid)
    logger.info("Refinement level %dx%d dt=%g", n_r, n_theta, dt)
    return {
        'poisson': poisson_error(grid, flat),
        'dirichlet_eigenvalue': bessel_eigenvalue_error(grid, flat),
        'a_eigenmode': a_eigenmode_error(grid, abs(eigen_c0(config.background)), config.scenario.mode),
        'bessel_wave': bessel_wave_error(grid, dt),
        'mms': mms_error(config, grid, dt),
    }


@dataclass
class ConvergenceStudy:
    table: pd.DataFrame
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def convergence_study(config, levels=None, parallel=False):
    """
    Errors and observed orders over refinement levels.

    Orders use the radial spacing of consecutive levels; the minimum order of
    each study is checked on the finest pair only. A single level yields
    errors and no orders.
    """
    levels = list(levels or config.grid.levels or [(config.grid.n_r, config.grid.n_theta, config.grid.dt)])
    if parallel and len(levels) > 1:
        with ThreadPoolExecutor(max_workers=min(4, len(levels))) as pool:
            results = list(pool.map(lambda lv: level_errors(config, lv), levels))
    else:
        results = [level_errors(config, lv) for lv in levels]

    spacings = [1.0 / (n_r - 0.5) for n_r, _, _ in levels]
    rows, checks = [], []
    for study in STUDIES:
        errors = [res[study] for res in results]
        if any(e is None for e in errors):
            logger.info("Skipping %s study (Taylor sign condition fails)", study)
            continue
        orders = [float('nan')] + observed_order(errors, spacings)
        for (n_r, n_theta, dt), error, order in zip(levels, errors, orders):
            rows.append({'study': study, 'n_r': n_r, 'n_theta': n_theta, 'dt': dt, 'error': error, 'order': order})
        if len(levels) > 1:
            checks.append(make_check('converge', f'{study} order', orders[-1], MIN_ORDER[study], bound='>='))
    table = pd.DataFrame(rows, columns=['study', 'n_r', 'n_theta', 'dt', 'error', 'order'])
    return ConvergenceStudy(table=table, checks=checks)
