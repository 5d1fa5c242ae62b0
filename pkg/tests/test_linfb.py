import json
import math

import numpy as np
import pandas as pd
import pytest

from config_loader import load_config
from linfb import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, build_parser, build_scenario, main, to_plain
from validation import build_series

SMALL = """
[grid]
n_r = 12
n_theta = 24
dt = 0.05
t_final = 0.1

[background]
family = {family}
alpha = {alpha}
beta = 0.0
c0 = {c0}

[scenario]
kind = {kind}

[output]
tag = small
"""


def write_config(tmp_path, family='prescribed_h', alpha=0.2, kind='zero', c0=1.0):
    path = tmp_path / 'small.ini'
    path.write_text(SMALL.format(family=family, alpha=alpha, kind=kind, c0=c0))
    return str(path)


def run(tmp_path, *args):
    return main(list(args) + ['--out', str(tmp_path / 'out')])


class TestParser:
    def test_seed_must_be_unsigned(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(['validate', '--seed', '-1'])

    def test_suite_choices(self):
        args = build_parser().parse_args(['validate', '--suite', 'grid', '--suite', 'eos'])
        assert args.suite == ['grid', 'eos']
        with pytest.raises(SystemExit):
            build_parser().parse_args(['validate', '--suite', 'everything'])

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


def test_to_plain():
    data = to_plain({'a': np.float64(1.5), 'b': np.array([1, 2]), 'c': float('nan'), 'd': np.bool_(True),
                     'e': (np.int64(3), math.inf)})
    assert data == {'a': 1.5, 'b': [1, 2], 'c': None, 'd': True, 'e': [3, None]}
    json.dumps(data)


class TestValidate:
    def test_passing_run_writes_artifacts(self, tmp_path, capsys):
        code = run(tmp_path, 'validate', '--config', write_config(tmp_path), '--suite', 'grid', '--suite', 'eos')
        assert code == EXIT_OK
        out = tmp_path / 'out'
        table = pd.read_csv(out / 'small_validate.csv')
        assert set(table['suite']) == {'grid', 'eos'}
        summary = json.loads((out / 'small_validate.json').read_text())
        assert summary['passed'] is True
        assert summary['n_failed'] == 0
        assert summary['schema_version'] == 1
        assert (out / 'small_validate_report.md').exists()
        assert 'Run Complete!' in capsys.readouterr().out

    def test_output_is_deterministic(self, tmp_path):
        config = write_config(tmp_path)
        first, second = tmp_path / 'a', tmp_path / 'b'
        for out in (first, second):
            main(['validate', '--config', config, '--suite', 'projection', '--seed', '11', '--out', str(out)])
        for name in ('small_validate.csv', 'small_validate.json'):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_negative_normal_operator_exits_one(self, tmp_path, capsys):
        config = write_config(tmp_path, c0=-0.5)
        assert run(tmp_path, 'validate', '--config', config, '--suite', 'operators') == EXIT_FAILURE
        assert 'Run Failed' in capsys.readouterr().out


class TestConfigErrors:
    def test_missing_config(self, tmp_path):
        assert run(tmp_path, 'validate', '--config', str(tmp_path / 'absent.ini')) == EXIT_USAGE

    def test_malformed_config(self, tmp_path):
        path = tmp_path / 'bad.ini'
        path.write_text("[grid]\nn_r = three\n")
        assert run(tmp_path, 'solve', '--config', str(path)) == EXIT_USAGE


class TestSolve:
    def test_zero_scenario(self, tmp_path):
        assert run(tmp_path, 'solve', '--config', write_config(tmp_path)) == EXIT_OK
        out = tmp_path / 'out'
        summary = json.loads((out / 'small_summary.json').read_text())
        assert summary['converged'] is True
        assert summary['scenario'] == 'zero'
        assert summary['command'] == 'solve'
        iteration = json.loads((out / 'small_iteration.json').read_text())
        assert iteration['iterations'] == 1
        trajectory = pd.read_csv(out / 'small_trajectory.csv')
        assert len(trajectory) == 3
        assert trajectory['t'].iloc[-1] == pytest.approx(0.1)

    def test_taylor_failure_aborts_solve(self, tmp_path):
        config = write_config(tmp_path, family='compression', alpha=0.0)
        assert run(tmp_path, 'solve', '--config', config) == EXIT_FAILURE

    def test_eigenmode_scenario_data(self, tmp_path):
        config = load_config(write_config(tmp_path, kind='eigenmode'))
        scenario = build_scenario(config, build_series(config))
        assert scenario.kind == 'eigenmode'
        assert math.isinf(scenario.compat_tol)
        assert scenario.F is None
        assert not np.any(scenario.data[1])

    @pytest.mark.slow
    def test_manufactured_scenario(self, tmp_path):
        assert run(tmp_path, 'solve', '--config', write_config(tmp_path, kind='manufactured')) == EXIT_OK
        summary = json.loads((tmp_path / 'out' / 'small_summary.json').read_text())
        assert summary['linf_error'] < 0.1
        assert 'energy_constants' in summary


@pytest.mark.slow
def test_converge_single_level(tmp_path):
    assert run(tmp_path, 'converge', '--config', write_config(tmp_path)) == EXIT_OK
    rates = pd.read_csv(tmp_path / 'out' / 'small_rates.csv')
    assert list(rates.columns) == ['study', 'n_r', 'n_theta', 'dt', 'error', 'order']
    assert set(rates['study']) == {'poisson', 'dirichlet_eigenvalue', 'a_eigenmode', 'bessel_wave', 'mms'}
