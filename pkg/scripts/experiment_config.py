#!/usr/bin/env python3
"""
Experiment Config - Load key=value run files for simulations and epsilon sweeps
Missing keys take the defaults below, unknown keys are rejected.
"""

import os

from config_loader import OUT_DIR
from spectral_core import ConfigError, DomainError, GridSpec, TruncationSpec
from spectral_norms import parse_norm
from linear_stratified import PhysParams
from pde_solvers import SCHEMES, SolverConfig

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'config')
DEFAULT_CONFIG_PATH = os.path.join(CONFIG_DIR, 'run.cfg')

RECIPES = ('well', 'ill')

DEFAULTS = {
    'grid.n': 16,
    'grid.L': 6.283185307179586,
    'params.nu': 1.0,
    'params.nuprime': 1.0,
    'params.eps': 0.1,
    'params.kappa': 1.0,
    'sweep.eps': [0.1, 0.05, 0.025, 0.0125],
    'data.delta': 0.125,
    'data.eta': 0.5,
    'data.gamma': None,
    'data.alpha0': 1.0,
    'data.c0': 0.1,
    'data.seed': 7,
    'data.recipe': 'ill',
    'data.amplitude': 0.5,
    'trunc.m': 1.0 / 259.0,
    'trunc.M': 1.0 / 1554.0,
    'run.dt': 0.01,
    'run.t_end': 0.5,
    'run.scheme': 'ifrk4',
    'run.cfl': 0.5,
    'run.snapshot_every': 5,
    'run.nonlinear': True,
    'norms': ['L2T:Linf', 'L2T:L2', 'LinfT:L2', 'E0'],
    'out.dir': None,
    'out.snapshots': False,
}


def _parse_bool(key: str, raw: str) -> bool:
    value = raw.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigError(f"{key}: expected a boolean, got '{raw}'")


def _convert(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if key == 'sweep.eps':
            return [float(v) for v in raw.split(',') if v.strip()]
        if key == 'norms':
            return [v.strip() for v in raw.split(',') if v.strip()]
        if key == 'data.gamma':
            return None if raw.lower() in ('', 'auto', 'none') else float(raw)
        if key == 'out.dir':
            return raw or None
        if isinstance(default, bool):
            return _parse_bool(key, raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse '{raw}'")


def parse_lines(lines, source: str = '<text>') -> dict:
    """key=value lines with '#' comments -> dict of converted values."""
    values = {}
    for number, line in enumerate(lines, 1):
        text = line.split('#', 1)[0].strip()
        if not text:
            continue
        if '=' not in text:
            raise ConfigError(f"{source}:{number}: expected key=value, got '{text}'")
        key, raw = (part.strip() for part in text.split('=', 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{number}: unknown key '{key}'")
        values[key] = _convert(key, raw)
    return values


class ExperimentConfig:
    """Resolved configuration of one run or sweep."""

    def __init__(self, values: dict = None, source: str = 'defaults'):
        self.values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key '{key}'")
            self.values[key] = value
        self.source = source
        self.validate()

    @classmethod
    def load(cls, path: str = None, overrides: dict = None) -> 'ExperimentConfig':
        path = path or DEFAULT_CONFIG_PATH
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, 'r') as f:
            values = parse_lines(f, source=path)
        for key, raw in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key '{key}'")
            values[key] = _convert(key, raw) if isinstance(raw, str) else raw
        return cls(values, source=path)

    def __getitem__(self, key: str):
        return self.values[key]

    def validate(self):
        v = self.values
        if int(v['grid.n']) < 4:
            raise ConfigError(f"grid.n must be at least 4, got {v['grid.n']}")
        if not v['grid.L'] > 0:
            raise ConfigError(f"grid.L must be positive, got {v['grid.L']}")
        eps = v['sweep.eps']
        if len(eps) < 4:
            raise ConfigError(f"sweep.eps needs at least 4 values, got {len(eps)}")
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"sweep.eps must be positive and strictly decreasing, got {eps}")
        delta, eta = v['data.delta'], v['data.eta']
        if not 0 < delta <= 1:
            raise ConfigError(f"data.delta must lie in (0, 1], got {delta}")
        if not 0 < eta <= 0.5:
            raise ConfigError(f"data.eta must lie in (0, 1/2], got {eta}")
        if eta * delta > 1.0 / 3.0:
            raise ConfigError(f"data.eta * data.delta must not exceed 1/3, got {eta * delta}")
        if v['data.gamma'] is not None and v['data.gamma'] < 0:
            raise ConfigError(f"data.gamma must be nonnegative, got {v['data.gamma']}")
        if not v['data.alpha0'] > 0:
            raise ConfigError(f"data.alpha0 must be positive, got {v['data.alpha0']}")
        if v['data.c0'] < 0 or v['data.amplitude'] < 0:
            raise ConfigError("data.c0 and data.amplitude must be nonnegative")
        if v['data.recipe'] not in RECIPES:
            raise ConfigError(f"data.recipe must be one of {RECIPES}, got '{v['data.recipe']}'")
        if not (v['trunc.m'] > 0 and v['trunc.M'] > 0):
            raise ConfigError("trunc.m and trunc.M must be positive")
        if v['run.scheme'] not in SCHEMES:
            raise ConfigError(f"run.scheme must be one of {SCHEMES}, got '{v['run.scheme']}'")
        for token in v['norms']:
            try:
                parse_norm(token)
            except ValueError as e:
                raise ConfigError(f"norms: {e}")
        self.physics()
        self.solver()

    @property
    def gamma(self) -> float:
        """Oscillating-data growth exponent; defaults to delta (1 - eta) / 2784."""
        g = self.values['data.gamma']
        if g is None:
            # 2784: growth rate constant of ill-prepared data in the general convergence estimate
            return self.values['data.delta'] * (1 - self.values['data.eta']) / 2784.0
        return float(g)

    @property
    def eps_list(self) -> list:
        return list(self.values['sweep.eps'])

    @property
    def out_dir(self) -> str:
        return self.values['out.dir'] or OUT_DIR

    def grid(self) -> GridSpec:
        return GridSpec.cube(int(self.values['grid.n']), float(self.values['grid.L']))

    def physics(self, eps: float = None) -> PhysParams:
        v = self.values
        try:
            return PhysParams(v['params.nu'], v['params.nuprime'],
                              v['params.eps'] if eps is None else eps, v['params.kappa'])
        except DomainError as e:
            raise ConfigError(f"params: {e}")

    def truncation(self, eps: float) -> TruncationSpec:
        return TruncationSpec.from_exponents(self.values['trunc.m'], self.values['trunc.M'], eps)

    def spatial_norms(self) -> tuple:
        return tuple(t for t in self.values['norms'] if not parse_norm(t).is_space_time)

    def solver(self, snapshot_every: int = None) -> SolverConfig:
        v = self.values
        return SolverConfig(v['run.dt'], v['run.t_end'], v['run.scheme'], v['run.cfl'],
                            snapshot_every or v['run.snapshot_every'], v['run.nonlinear'],
                            self.spatial_norms())

    def describe(self) -> dict:
        out = dict(self.values)
        out['data.gamma.resolved'] = self.gamma
        out['source'] = self.source
        return out


def load_experiment_config(path: str = None, overrides: dict = None) -> ExperimentConfig:
    return ExperimentConfig.load(path, overrides)


if __name__ == "__main__":
    config = load_experiment_config()

    print("Experiment Config")
    print("=" * 40)
    for key, value in sorted(config.describe().items()):
        print(f"{key}: {value}")
