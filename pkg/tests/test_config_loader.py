from pathlib import Path

import pytest

from config_loader import RunConfig, load_config, parse_levels, validate_config
from exceptions import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'


def write_ini(tmp_path, text, name='run.ini'):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.mark.parametrize('name', ['default', 'eigenmode', 'refinement', 'taylor_fail'])
def test_shipped_configs_load(name):
    config = load_config(CONFIGS / f'{name}.ini')
    assert config.output.tag == name
    assert config.source.endswith(f'{name}.ini')


def test_values_are_typed():
    config = load_config(CONFIGS / 'refinement.ini')
    assert config.grid.levels == ((16, 32, 0.02), (32, 64, 0.01), (64, 128, 0.005))
    assert config.iteration.parallel is True
    assert isinstance(config.iteration.max_iter, int)
    assert config.background.family == 'compression'


def test_missing_sections_take_defaults(tmp_path):
    config = load_config(write_ini(tmp_path, "[output]\ntag = minimal\n"))
    assert config.grid == RunConfig().grid
    assert config.output.tag == 'minimal'
    assert config.output.write_report is True


def test_as_dict_round_trips_levels():
    data = load_config(CONFIGS / 'refinement.ini').as_dict()
    assert data['grid']['levels'][0] == [16, 32, 0.02]
    assert set(data) == {'grid', 'eos', 'background', 'scenario', 'iteration', 'output'}


@pytest.mark.parametrize('text, message', [
    ("[grid]\nn_r = many\n", 'Cannot parse'),
    ("[grid]\nspacing = 0.1\n", 'Unknown key'),
    ("[solver]\ntol = 1\n", 'Unknown section'),
    ("[grid]\nn_theta = 33\n", 'n_theta'),
    ("[grid]\ndt = 0\n", 'dt'),
    ("[eos]\ngamma = 1.0\n", 'gamma'),
    ("[background]\nfamily = shear\n", 'family'),
    ("[background]\nalpha = 0.45\nbeta = 0.25\n", 'compression'),
    ("[scenario]\nkind = random\n", 'kind'),
    ("[scenario]\norder = 4\n", 'order'),
    ("[iteration]\nr = 2\n", 'iteration.r'),
    ("[iteration]\nparallel = maybe\n", 'Cannot parse'),
    ("[grid]\nlevels = 16x32\n", 'refinement level'),
    ("[grid\nn_r = 8\n", 'Malformed'),
])
def test_invalid_configs(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        load_config(write_ini(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match='not found'):
        load_config(tmp_path / 'absent.ini')


def test_parse_levels():
    assert parse_levels('8X16:0.1, ') == ((8, 16, 0.1),)
    assert parse_levels('') == ()


def test_validate_config_defaults():
    config = RunConfig()
    assert validate_config(config) is config
