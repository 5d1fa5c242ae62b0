import pandas as pd

from config_loader import OutputConfig, RunConfig
from report_generator import ReportGenerator
from validation import Check, info


def test_report_sections(tmp_path):
    config = RunConfig(output=OutputConfig(tag='unit'))
    checks = [Check('grid', 'divergence theorem', 1e-14, 1e-10),
              Check('operators', 'A symmetry', 1e-6, 1e-10, passed=False),
              info('projection', 'continuity constant', 1.2)]
    table = pd.DataFrame([{'study': 'poisson', 'n_r': 16, 'error': 1e-3, 'order': float('nan')}])
    results = {'checks': checks, 'metrics': {'converged': True, 'iterations': 4}, 'table': table,
               'files': ['unit_validate.csv'], 'seed': 5}

    path = ReportGenerator('validate', config, results, tmp_path).generate_report()
    assert path.name == 'unit_validate_report.md'
    text = path.read_text()
    assert text.startswith('# Invariant Validation Report')
    assert '**2 of 3 checks passed.**' in text
    assert '| grid | divergence theorem | 1e-14 | <= 1e-10 | PASS |' in text
    assert '| operators | A symmetry | 1e-06 | <= 1e-10 | FAIL |' in text
    assert '| projection | continuity constant | 1.2 |  | info |' in text
    assert '- **converged:** yes' in text
    assert '| poisson | 16 | 0.001 | - |' in text
    assert '- `unit_validate.csv`' in text
    assert '**Seed:** 5' in text


def test_minimal_report(tmp_path):
    path = ReportGenerator('converge', RunConfig(), {}, tmp_path).generate_report()
    text = path.read_text()
    assert text.startswith('# Refinement Study Report')
    assert '## Checks' not in text
    assert '(defaults)' in text
