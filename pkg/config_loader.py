"""
Run configuration: INI file parsing into typed, validated settings.
"""

import configparser
import logging
from dataclasses import dataclass, field
from pathlib import Path

from eos_background import FAMILIES
from exceptions import ConfigError

logger = logging.getLogger(__name__)

SCENARIOS = ('zero', 'eigenmode', 'manufactured')


@dataclass(frozen=True)
class GridConfig:
    n_r: int = 64
    n_theta: int = 128
    dt: float = 0.002
    t_final: float = 0.2
    levels: tuple = ()


@dataclass(frozen=True)
class EOSConfig:
    gamma: float = 2.0
    K: float = 1.0
    rho_bar0: float = 1.0


@dataclass(frozen=True)
class BackgroundConfig:
    family: str = 'compression'
    alpha: float = 0.2
    beta: float = 0.25
    omega: float = 1.0
    velocity_x: float = 1.0
    velocity_y: float = 0.0
    angular_speed: float = 1.0
    c0: float = 1.0
    taylor_c0: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = 'zero'
    mode: int = 2
    amplitude: float = 1.0
    order: int = 3


@dataclass(frozen=True)
class IterationConfig:
    tol: float = 1e-8
    max_iter: int = 30
    r: int = 0
    cg_tol: float = 1e-10
    cg_max_iter: int = 500
    parallel: bool = False


@dataclass(frozen=True)
class OutputConfig:
    tag: str = 'run'
    write_report: bool = True


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    eos: EOSConfig = field(default_factory=EOSConfig)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    iteration: IterationConfig = field(default_factory=IterationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: str = ''

    def as_dict(self):
        return {
            'grid': {**vars(self.grid), 'levels': [list(level) for level in self.grid.levels]},
            'eos': vars(self.eos),
            'background': vars(self.background),
            'scenario': vars(self.scenario),
            'iteration': vars(self.iteration),
            'output': vars(self.output),
        }


SECTIONS = {
    'grid': GridConfig,
    'eos': EOSConfig,
    'background': BackgroundConfig,
    'scenario': ScenarioConfig,
    'iteration': IterationConfig,
    'output': OutputConfig,
}


def parse_levels(text):
    """
    Parse refinement levels of the form "16x32:0.02, 32x64:0.01".

    Returns:
        Tuple of (n_r, n_theta, dt) tuples
    """
    levels = []
    for item in text.split(','):
        item = item.strip()
        if not item:
            continue
        try:
            size, dt = item.split(':')
            n_r, n_theta = size.lower().split('x')
            levels.append((int(n_r), int(n_theta), float(dt)))
        except ValueError:
            raise ConfigError(f"bad refinement level '{item}' (expected NRxNTHETA:DT)")
    return tuple(levels)


class ConfigLoader:
    """Loads an INI run configuration and validates it into a RunConfig."""

    def __init__(self, config_file):
        """
        Args:
            config_file: Path to the INI file
        """
        self.config_file = Path(config_file)

    def load_parser(self):
        if not self.config_file.exists():
            raise ConfigError(f"Config file not found: {self.config_file}")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read(self.config_file)
        except configparser.Error as e:
            raise ConfigError(f"Malformed config {self.config_file}: {e}")
        return parser

    def _section(self, parser, name, cls):
        defaults = cls()
        if not parser.has_section(name):
            return defaults
        values = {}
        known = {k: v for k, v in vars(defaults).items()}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"Unknown key '{key}' in section [{name}]")
            values[key] = self._convert(name, key, raw, known[key])
        return cls(**{**known, **values})

    @staticmethod
    def _convert(section, key, raw, default):
        raw = raw.strip()
        if key == 'levels':
            return parse_levels(raw)
        try:
            if isinstance(default, bool):
                lowered = raw.lower()
                if lowered in ('true', 'yes', 'on', '1'):
                    return True
                if lowered in ('false', 'no', 'off', '0'):
                    return False
                raise ValueError(raw)
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
            return raw
        except ValueError:
            raise ConfigError(f"Cannot parse [{section}] {key} = '{raw}'")

    def process(self):
        """
        Parse and validate the whole file.

        Returns:
            RunConfig

        Raises:
            ConfigError: unknown sections or keys, unparsable values, out-of-range parameters
        """
        parser = self.load_parser()
        for name in parser.sections():
            if name not in SECTIONS:
                raise ConfigError(f"Unknown section [{name}] (expected one of {sorted(SECTIONS)})")
        sections = {name: self._section(parser, name, cls) for name, cls in SECTIONS.items()}
        config = RunConfig(**sections, source=str(self.config_file))
        validate_config(config)
        logger.info("Loaded config %s", self.config_file)
        return config


def validate_config(config):
    """Range checks; raises ConfigError on the first violation."""
    g, eos, bg = config.grid, config.eos, config.background
    sc, it = config.scenario, config.iteration
    checks = [
        (g.n_r >= 4, f"grid.n_r must be >= 4, got {g.n_r}"),
        (g.n_theta >= 8 and g.n_theta % 2 == 0, f"grid.n_theta must be even and >= 8, got {g.n_theta}"),
        (g.dt > 0, f"grid.dt must be positive, got {g.dt}"),
        (g.t_final > 0, f"grid.t_final must be positive, got {g.t_final}"),
        (all(n_r >= 4 and n_t >= 8 and n_t % 2 == 0 and dt > 0 for n_r, n_t, dt in g.levels),
         "grid.levels entries must be valid grids with positive dt"),
        (eos.gamma > 1.0, f"eos.gamma must exceed 1, got {eos.gamma}"),
        (eos.K > 0, f"eos.K must be positive, got {eos.K}"),
        (eos.rho_bar0 > 0, f"eos.rho_bar0 must be positive, got {eos.rho_bar0}"),
        (bg.family in FAMILIES, f"background.family must be one of {FAMILIES}, got '{bg.family}'"),
        (bg.family != 'compression' or 0 <= bg.alpha * (1.0 + abs(bg.beta)) < 0.5,
         f"compression needs 0 <= alpha*(1+|beta|) < 1/2, got alpha={bg.alpha}, beta={bg.beta}"),
        (bg.taylor_c0 >= 0, f"background.taylor_c0 must be nonnegative, got {bg.taylor_c0}"),
        (sc.kind in SCENARIOS, f"scenario.kind must be one of {SCENARIOS}, got '{sc.kind}'"),
        (1 <= sc.mode <= 8, f"scenario.mode must lie in 1..8, got {sc.mode}"),
        (0 <= sc.order <= 3, f"scenario.order must lie in 0..3, got {sc.order}"),
        (it.tol > 0, f"iteration.tol must be positive, got {it.tol}"),
        (it.max_iter >= 1, f"iteration.max_iter must be >= 1, got {it.max_iter}"),
        (it.r in (0, 1), f"iteration.r must be 0 or 1, got {it.r}"),
        (it.cg_tol > 0, f"iteration.cg_tol must be positive, got {it.cg_tol}"),
        (it.cg_max_iter >= 1, f"iteration.cg_max_iter must be >= 1, got {it.cg_max_iter}"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    return config


def load_config(path):
    return ConfigLoader(path).process()
