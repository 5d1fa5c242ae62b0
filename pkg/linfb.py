#!/usr/bin/env python3
"""
Linearized Free-Boundary Euler Lab

Command line driver: invariant validation, scenario solves and refinement
studies for the linearized compressible Euler equations with a free
boundary, posed in Lagrangian coordinates on the unit disk.

    linfb validate --config configs/default.ini --out output
    linfb solve    --config configs/default.ini --out output
    linfb converge --config configs/refinement.ini --out output

Exit codes: 0 all checks passed, 1 numerical failure, 2 usage or config error.
"""

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from config_loader import load_config
from coupled import COMPAT_TOL, SCHEMA_VERSION, ManufacturedSolution, energy_report, solve_linearized
from divfree_solver import divfree_energy, divfree_integrate, measure_frequency
from elliptic import apply_P
from eos_background import taylor_check
from exceptions import ConfigError, LinfbError
from operators import harmonic_gradient
from report_generator import ReportGenerator
from validation import (SUITE_FUNCTIONS, SUITES, SuiteContext, build_series, checks_frame, convergence_study,
                        eigen_c0, make_check)

logger = logging.getLogger('linfb')

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

FLOAT_FORMAT = '%.17g'
DRIFT_TOL = 1e-4
FREQUENCY_TOL = 0.01
FREQUENCY_FRACTION = 0.3


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def to_plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json(path, payload):
    with open(path, 'w') as f:
        f.write(json.dumps(to_plain(payload), sort_keys=True, indent=2) + '\n')
    return path


def write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def _banner(title):
    print("=" * 60)
    print(title)
    print("=" * 60)


def _status(passed):
    return '✓' if passed else '✗'


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def run_validate(config, output_dir, seed=0, suites=SUITES):
    """
    Run the invariant suites and write the check table.

    Returns:
        Exit code (0 iff every check passed)
    """
    tag = config.output.tag
    print("Step 1: Running invariant suites...")
    ctx = SuiteContext(config, seed)
    checks = []
    for name in suites:
        results = SUITE_FUNCTIONS[name](ctx)
        checks.extend(results)
        passed = sum(c.passed for c in results)
        print(f"  {_status(passed == len(results))} {name}: {passed}/{len(results)} checks passed")
    print()

    print("Step 2: Writing results...")
    table = checks_frame(checks)
    csv_file = write_csv(table, output_dir / f'{tag}_validate.csv')
    all_passed = all(c.passed for c in checks)
    summary = {
        'schema_version': SCHEMA_VERSION,
        'command': 'validate',
        'seed': seed,
        'config': config.as_dict(),
        'passed': all_passed,
        'n_checks': len(checks),
        'n_failed': sum(not c.passed for c in checks),
        'checks': [asdict(c) for c in checks],
    }
    json_file = write_json(output_dir / f'{tag}_validate.json', summary)
    print(f"  ✓ Check table saved to: {csv_file}")
    print(f"  ✓ Summary saved to: {json_file}")
    if config.output.write_report:
        report = ReportGenerator('validate', config, {'checks': checks, 'seed': seed,
                                                      'files': [csv_file.name, json_file.name]},
                                 output_dir).generate_report()
        print(f"  ✓ Report saved to: {report}")
    print()

    print(table.to_string(index=False))
    print()
    return EXIT_OK if all_passed else EXIT_FAILURE


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    kind: str
    F: object = None
    data: tuple = None
    compat_tol: float = COMPAT_TOL
    mms: ManufacturedSolution = None


def build_scenario(config, series):
    """
    Source and initial data of the configured scenario.

    Eigenmode data P grad(r^m cos m theta) is not compatible at the boundary,
    so its compatibility residual is reported rather than enforced.
    """
    sc = config.scenario
    grid = series.grid
    if sc.kind == 'zero':
        return Scenario(kind='zero')
    if sc.kind == 'eigenmode':
        W0 = sc.amplitude * apply_P(grid, series.at(0.0).frame, harmonic_gradient(grid, sc.mode))
        return Scenario(kind='eigenmode', data=(W0, np.zeros_like(W0)), compat_tol=math.inf)
    mms = ManufacturedSolution(series, amplitude=sc.amplitude)
    return Scenario(kind='manufactured', F=mms.forcing, data=mms.data(0.0), mms=mms)


def eigenmode_oscillation(config, series, W0):
    """
    Divergence-free run of the eigenmode data: conserved energy drift and frequency.

    Returns:
        (DivFreeEnergy, metrics dict, list of Check)
    """
    g, it, bg, sc = config.grid, config.iteration, config.background, config.scenario
    c0 = eigen_c0(bg) if bg.family == 'prescribed_h' else taylor_check(series.at(0.0).frame).c0_measured
    omega = math.sqrt(abs(c0) * sc.mode) if c0 else 1.0
    duration = max(g.t_final, FREQUENCY_FRACTION * 2.0 * math.pi / omega)
    steps = int(math.ceil(duration / g.dt))
    traj = divfree_integrate(series, W0, np.zeros_like(W0), dt=g.dt, t_final=steps * g.dt,
                             tol=it.cg_tol, max_iter=it.cg_max_iter)
    energy = divfree_energy(traj, r=1)
    conserved = energy.conserved
    drift = float(np.max(np.abs(conserved - conserved[0])) / abs(conserved[0])) if conserved[0] else 0.0
    frequency = measure_frequency(traj)
    metrics = {'conserved_drift': drift, 'frequency': frequency, 'frequency_expected': omega,
               'max_projection_defect': float(np.max(energy.projection_defect))}

    checks = []
    if series.background.flow.time_independent_metric:
        checks.append(make_check('solve', 'divergence-free energy drift', drift, DRIFT_TOL))
    if bg.family == 'prescribed_h':
        checks.append(make_check('solve', 'eigenmode frequency (relative)', abs(frequency - omega) / omega,
                                 FREQUENCY_TOL))
    return energy, metrics, checks


def run_solve(config, output_dir, seed=0):
    """
    Solve the configured scenario with the coupled iteration and write its artifacts.

    Returns:
        Exit code
    """
    g, it, bg = config.grid, config.iteration, config.background
    tag = config.output.tag
    steps = int(round(g.t_final / g.dt))

    print("Step 1: Building background...")
    series = build_series(config, cache_size=8 * (steps + 1) + 64)
    taylor = taylor_check(series.at(0.0).frame, bg.taylor_c0 or None)
    print(f"  ✓ Grid: {series.grid}")
    print(f"  ✓ Background: {series.background.flow!r}")
    print(f"  {_status(taylor.passed)} Taylor sign condition: c0 measured {taylor.c0_measured:.6g}")
    print()

    print(f"Step 2: Preparing '{config.scenario.kind}' scenario...")
    scenario = build_scenario(config, series)
    print("  ✓ Initial data and source ready")
    print()

    print("Step 3: Running coupled iteration...")
    traj, report = solve_linearized(
        series, F=scenario.F, data=scenario.data, dt=g.dt, t_final=steps * g.dt, r=it.r, tol=it.tol,
        max_iter=it.max_iter, K=config.scenario.order, cg_tol=it.cg_tol, cg_max_iter=it.cg_max_iter,
        parallel=it.parallel, compat_tol=scenario.compat_tol, taylor_c0=bg.taylor_c0 or None,
    )
    print(f"  ✓ Converged in {report.iterations} sweeps (max contraction ratio {report.max_ratio:.4g})")
    print(f"  ✓ Relative residual of L W = F: {report.solution_residual:.3g}")
    print()

    print("Step 4: Measuring energies...")
    energy = energy_report(traj, r=1)
    files = []
    trajectory_file = write_csv(energy.to_frame(), output_dir / f'{tag}_trajectory.csv')
    files.append(trajectory_file.name)
    iteration_file = write_json(output_dir / f'{tag}_iteration.json', report.to_dict())
    files.append(iteration_file.name)
    print(f"  ✓ Trajectory saved to: {trajectory_file}")
    print(f"  ✓ Iteration report saved to: {iteration_file}")
    print()

    metrics = {
        'converged': report.converged,
        'iterations': report.iterations,
        'max_ratio': report.max_ratio,
        'solution_residual': report.solution_residual,
        'compat_residual': max(report.compat_residuals) if report.compat_residuals else 0.0,
        'taylor_c0_measured': taylor.c0_measured,
        'final_Etilde_0': float(energy.E_tilde[0][-1]),
        'final_Etilde_1': float(energy.E_tilde[1][-1]),
    }
    checks = []
    if scenario.mms is not None:
        metrics['linf_error'] = scenario.mms.error(traj)
        print(f"  ✓ Manufactured solution max error: {metrics['linf_error']:.3g}")
        print()

    if scenario.kind == 'eigenmode':
        print("Step 5: Divergence-free eigenmode run...")
        divfree, extra, checks = eigenmode_oscillation(config, series, scenario.data[0])
        frame = divfree.to_frame()
        frame['conserved'] = divfree.conserved
        divfree_file = write_csv(frame, output_dir / f'{tag}_divfree.csv')
        files.append(divfree_file.name)
        metrics.update(extra)
        print(f"  ✓ Frequency {extra['frequency']:.6g} (expected {extra['frequency_expected']:.6g})")
        print(f"  ✓ Divergence-free run saved to: {divfree_file}")
        print()

    summary = {
        'schema_version': SCHEMA_VERSION,
        'command': 'solve',
        'seed': seed,
        'scenario': scenario.kind,
        'config': config.as_dict(),
        'energy_constants': energy.constants(),
        'checks': [asdict(c) for c in checks],
        'passed': all(c.passed for c in checks),
        **metrics,
    }
    summary_file = write_json(output_dir / f'{tag}_summary.json', summary)
    files.append(summary_file.name)
    print(f"  ✓ Summary saved to: {summary_file}")
    if config.output.write_report:
        report_file = ReportGenerator('solve', config, {'metrics': metrics, 'checks': checks, 'seed': seed,
                                                        'files': files}, output_dir).generate_report()
        print(f"  ✓ Report saved to: {report_file}")
    print()
    return EXIT_OK if summary['passed'] else EXIT_FAILURE


# ---------------------------------------------------------------------------
# converge
# ---------------------------------------------------------------------------

def run_converge(config, output_dir, seed=0):
    """
    Refinement study over the configured levels.

    Returns:
        Exit code (1 when an observed order falls below its minimum)
    """
    tag = config.output.tag
    levels = list(config.grid.levels) or [(config.grid.n_r, config.grid.n_theta, config.grid.dt)]
    print("Step 1: Refinement levels")
    for n_r, n_theta, dt in levels:
        print(f"  - {n_r} x {n_theta}, dt = {dt}")
    print()

    print("Step 2: Computing errors...")
    study = convergence_study(config, levels, parallel=config.iteration.parallel)
    rates_file = write_csv(study.table, output_dir / f'{tag}_rates.csv')
    print(f"  ✓ Rate table saved to: {rates_file}")
    for check in study.checks:
        print(f"  {_status(check.passed)} {check.name}: {check.value:.3f} (minimum {check.threshold})")
    print()

    summary = {
        'schema_version': SCHEMA_VERSION,
        'command': 'converge',
        'seed': seed,
        'config': config.as_dict(),
        'levels': [list(level) for level in levels],
        'rows': study.table.to_dict(orient='records'),
        'checks': [asdict(c) for c in study.checks],
        'passed': study.passed,
    }
    summary_file = write_json(output_dir / f'{tag}_converge.json', summary)
    print(f"  ✓ Summary saved to: {summary_file}")
    if config.output.write_report:
        report_file = ReportGenerator('converge', config, {'checks': study.checks, 'table': study.table,
                                                           'seed': seed,
                                                           'files': [rates_file.name, summary_file.name]},
                                      output_dir).generate_report()
        print(f"  ✓ Report saved to: {report_file}")
    print()

    print(study.table.to_string(index=False))
    print()
    return EXIT_OK if study.passed else EXIT_FAILURE


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog='linfb',
        description='Numerical lab for the linearized free-boundary compressible Euler equations'
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    commands = {
        'validate': 'Run the invariant suites and print a pass/fail table',
        'solve': 'Solve the configured scenario and write CSV/JSON artifacts',
        'converge': 'Run the refinement study and report observed orders',
    }
    for name, help_text in commands.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument(
            '--config',
            type=str,
            default='configs/default.ini',
            help='Path to the INI run configuration (default: configs/default.ini)'
        )
        sub.add_argument(
            '--out',
            type=str,
            default='output',
            help='Output directory for results (default: output)'
        )
        sub.add_argument(
            '--seed',
            type=_seed,
            default=0,
            help='Seed for randomized test fields (default: 0)'
        )
        sub.add_argument(
            '-v', '--verbose',
            action='store_true',
            help='Debug logging and tracebacks on failure'
        )
        if name == 'validate':
            sub.add_argument(
                '--suite',
                action='append',
                choices=SUITES,
                help='Run only the named suite (repeatable; default: all)'
            )
    return parser


def main(argv=None):
    """Main entry point for the linearized free-boundary lab."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(levelname)s %(name)s: %(message)s',
    )

    _banner("Linearized Free-Boundary Euler Lab")
    print(f"\nCommand: {args.command}")
    print(f"Config file: {args.config}")
    print(f"Output directory: {args.out}")
    print(f"Seed: {args.seed}")
    print()

    try:
        config = load_config(args.config)
    except ConfigError as e:
        print(f"Error: {e}")
        return EXIT_USAGE

    output_dir = Path(args.out)
    output_dir.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == 'validate':
            code = run_validate(config, output_dir, args.seed, tuple(args.suite or SUITES))
        elif args.command == 'solve':
            code = run_solve(config, output_dir, args.seed)
        else:
            code = run_converge(config, output_dir, args.seed)
    except ConfigError as e:
        print(f"Error: {e}")
        return EXIT_USAGE
    except LinfbError as e:
        print(f"Error: {e}")
        logger.debug("Run aborted", exc_info=True)
        return EXIT_FAILURE

    _banner("Run Complete!" if code == EXIT_OK else "Run Failed")
    print(f"\nResults saved in: {output_dir}")
    print()
    return code


if __name__ == '__main__':
    sys.exit(main())
