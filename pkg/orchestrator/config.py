#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Configuration management for transfer-accuracy runs.
Loads a YAML config (or a plain ``key = value`` file) with environment
variable support, and merges command-line overrides on top.
"""

import copy
import os
import yaml
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

# Bare names accepted in ``key = value`` files, mapped to their dotted keys.
ALIASES = {
    'n_min': 'roc.n_min',
    'u': 'roc.u',
    'eval_points': 'roc.eval_points',
    'cv_folds': 'tuning.cv_folds',
    'folds': 'tuning.cv_folds',
    'lambda_alpha': 'tuning.lambda_alpha',
    'lambda_gamma': 'tuning.lambda_gamma',
    'lambda_grid_size': 'tuning.lambda_grid_size',
    'lambda_lo': 'tuning.lambda_lo',
    'lambda_hi': 'tuning.lambda_hi',
    'kappa': 'tuning.kappa',
    'kappa_grid': 'tuning.kappa_grid',
    'B': 'bootstrap.B',
    'bootstrap': 'bootstrap.B',
    'level': 'bootstrap.level',
    'seed': 'run.seed',
    'threads': 'run.threads',
    'backend': 'solver.backend',
    'tol': 'solver.tol',
    'max_iter': 'solver.max_iter',
    'standardize': 'data.standardize',
}


def _deep_merge(base: Dict[str, Any], extra: Mapping[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_dotted(target: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split('.')
    node = target
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def parse_key_value(text: str) -> Dict[str, Any]:
    """Parse ``key = value`` lines (``#`` comments); values are typed as YAML scalars."""
    config: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        parsed = yaml.safe_load(value) if value else None
        if isinstance(parsed, str) and ',' in parsed:
            parsed = [yaml.safe_load(v.strip()) for v in parsed.split(',') if v.strip()]
        _set_dotted(config, ALIASES.get(key, key), parsed)
    return config


class ConfigManager:
    """
    Configuration manager that loads run settings from YAML or key = value files.
    Supports environment variable expansion and command-line overrides.
    """

    def __init__(self, config_path: str = "transfer-config.yaml", quiet: bool = False):
        self.config_path = Path(config_path)
        self.quiet = quiet
        self._config: Dict[str, Any] = {}
        self._overrides: Dict[str, Any] = {}
        self.load()

    def load(self) -> None:
        """Load the configuration file over the built-in defaults"""
        loaded: Dict[str, Any] = {}
        if self.config_path.exists():
            with open(self.config_path, 'r', encoding='utf-8') as f:
                text = f.read()
            if self.config_path.suffix.lower() in ('.yaml', '.yml'):
                loaded = yaml.safe_load(text) or {}
            else:
                loaded = parse_key_value(text)
        elif not self.quiet:
            print(f"[Config] Warning: Config file not found: {self.config_path}")
        self._config = _deep_merge(self._default_config(), loaded)

    def _default_config(self) -> Dict[str, Any]:
        """Return default configuration"""
        return {
            'data': {
                'standardize': True,
            },
            'tuning': {
                'cv_folds': 5,
                'lambda_grid_size': 20,
                'lambda_lo': 0.01,
                'lambda_hi': 0.5,
                'lambda_alpha': None,
                'lambda_gamma': None,
                'kappa': None,
                'kappa_grid': [0.25, 0.5, 1.0, 2.0],
            },
            'solver': {
                'backend': 'proximal',
                'tol': 1e-7,
                'max_iter': 10000,
            },
            'roc': {
                'n_min': None,
                'u': [0.1, 0.2],
                'eval_points': None,
            },
            'bootstrap': {
                'enabled': True,
                'B': 500,
                'level': 0.95,
            },
            'run': {
                'seed': 0,
                'threads': 1,
                'output': 'outputs',
                'history': 'state/run_history.json',
            },
            'simulation': {
                'config': 'i',
                'n': 600,
                'N': 3000,
                'p': 100,
                'q': 4,
                'reps': 200,
                'n_min': 120,
                'B': 500,
                'truth_rows': 1000000,
            },
        }

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get config value with dot notation.

        Examples:
            config.get('tuning.cv_folds')
            config.get('bootstrap.B')

        Environment variables are expanded if value is like ${VAR_NAME}
        """
        keys = key.split('.')
        value = self._config

        for k in keys:
            if isinstance(value, dict):
                value = value.get(k)
            else:
                return default
            if value is None:
                return default

        if isinstance(value, str) and value.startswith('${') and value.endswith('}'):
            env_var = value[2:-1]
            raw = os.environ.get(env_var)
            return default if raw is None else yaml.safe_load(raw)

        return value

    def overrides(self, mapping: Mapping[str, Any]) -> Dict[str, Any]:
        """Apply dotted-key overrides, skipping ``None`` values. Returns what was applied."""
        applied = {k: v for k, v in mapping.items() if v is not None}
        for key, value in applied.items():
            _set_dotted(self._config, ALIASES.get(key, key), value)
        self._overrides.update(applied)
        return applied

    @property
    def applied_overrides(self) -> Dict[str, Any]:
        return dict(self._overrides)

    def effective(self) -> Dict[str, Any]:
        """The merged configuration, with environment references expanded."""
        def expand(node: Any, prefix: str) -> Any:
            if isinstance(node, dict):
                return {k: expand(v, f"{prefix}{k}.") for k, v in node.items()}
            return self.get(prefix[:-1], None) if isinstance(node, str) and node.startswith('${') else node
        return expand(self._config, '')

    def validate(self) -> None:
        """Raise ``ValueError`` for settings no run can use"""
        if self.cv_folds < 2:
            raise ValueError(f"tuning.cv_folds must be >= 2, got {self.cv_folds}")
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"bootstrap.level must lie in (0, 1), got {self.level}")
        if self.bootstrap_enabled and self.bootstrap_B < 100:
            raise ValueError(f"bootstrap.B must be >= 100, got {self.bootstrap_B}")
        if self.n_min is not None and self.n_min < 20:
            raise ValueError(f"roc.n_min must be >= 20, got {self.n_min}")
        if self.tol <= 0:
            raise ValueError(f"solver.tol must be positive, got {self.tol}")
        if any(not 0.0 <= u <= 1.0 for u in self.u_values):
            raise ValueError(f"roc.u values must lie in [0, 1], got {self.u_values}")
        for name, value in (('tuning.lambda_alpha', self.lambda_alpha), ('tuning.lambda_gamma', self.lambda_gamma)):
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @property
    def standardize(self) -> bool:
        return bool(self.get('data.standardize', True))

    @property
    def cv_folds(self) -> int:
        return int(self.get('tuning.cv_folds', 5))

    @property
    def lambda_grid_size(self) -> int:
        return int(self.get('tuning.lambda_grid_size', 20))

    @property
    def lambda_range(self) -> tuple:
        return float(self.get('tuning.lambda_lo', 0.01)), float(self.get('tuning.lambda_hi', 0.5))

    @property
    def lambda_alpha(self) -> Optional[float]:
        value = self.get('tuning.lambda_alpha')
        return None if value is None else float(value)

    @property
    def lambda_gamma(self) -> Optional[float]:
        value = self.get('tuning.lambda_gamma')
        return None if value is None else float(value)

    @property
    def kappa(self) -> Optional[float]:
        value = self.get('tuning.kappa')
        return None if value is None else float(value)

    @property
    def kappa_grid(self) -> List[float]:
        return [float(k) for k in self.get('tuning.kappa_grid', [0.25, 0.5, 1.0, 2.0])]

    @property
    def backend(self) -> str:
        return str(self.get('solver.backend', 'proximal'))

    @property
    def tol(self) -> float:
        return float(self.get('solver.tol', 1e-7))

    @property
    def max_iter(self) -> int:
        return int(self.get('solver.max_iter', 10000))

    @property
    def n_min(self) -> Optional[int]:
        value = self.get('roc.n_min')
        return None if value is None else int(value)

    @property
    def u_values(self) -> List[float]:
        value = self.get('roc.u', [0.1, 0.2])
        if isinstance(value, (int, float)):
            value = [value]
        return [float(u) for u in value]

    @property
    def eval_points(self) -> Optional[int]:
        value = self.get('roc.eval_points')
        return None if value is None else int(value)

    @property
    def bootstrap_enabled(self) -> bool:
        return bool(self.get('bootstrap.enabled', True))

    @property
    def bootstrap_B(self) -> int:
        return int(self.get('bootstrap.B', 500))

    @property
    def level(self) -> float:
        return float(self.get('bootstrap.level', 0.95))

    @property
    def seed(self) -> int:
        return int(self.get('run.seed', 0))

    @property
    def threads(self) -> int:
        return max(1, int(self.get('run.threads', 1)))

    @property
    def output_dir(self) -> str:
        return str(self.get('run.output', 'outputs'))

    @property
    def history_path(self) -> str:
        return str(self.get('run.history', 'state/run_history.json'))

    def simulation(self, key: str, default: Any = None) -> Any:
        return self.get(f'simulation.{key}', default)

    def __repr__(self) -> str:
        return f"ConfigManager(config={self.config_path}, overrides={sorted(self._overrides)})"
