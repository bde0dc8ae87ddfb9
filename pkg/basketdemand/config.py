"""
Run configuration.

Settings live in one YAML file with a defaults: section mirroring the live sections, e.g.

    defaults:
      simulate:
        n-draws: 1000
    simulate:
      n-draws: 200

Every key is addressed by its colon-joined path (simulate:n-draws) and must appear in SETTING_RULES, which gives
its default and the values it may take: a [min, max] list for numbers, a tuple of allowed values, or a type for
free values. Resolution order is rule default, file defaults:, file section, then command-line overrides.
"""

import hashlib
import json
from copy import deepcopy
from logging import getLogger

from ruamel.yaml import YAML, YAMLError

from .errors import ConfigError

SETTING_RULES = {'run:seed': {'default': 20200201, 'vals': [0, 2 ** 64 - 1]},
                 'run:out': {'default': 'out', 'vals': str},
                 'run:threads': {'default': 1, 'vals': [1, 512]},
                 'run:input': {'default': '', 'vals': str},

                 'simulate:n-draws': {'default': 1000, 'vals': [1, 10 ** 7]},
                 'simulate:n-goods-base': {'default': 10, 'vals': [1, 1000]},
                 'simulate:n-baskets-base': {'default': 51, 'vals': [1, 10000]},
                 'simulate:max-extra-rows-cols': {'default': 10, 'vals': [0, 1000]},
                 'simulate:phi': {'default': -0.5, 'vals': [-1e6, -1e-12]},
                 'simulate:proxy-mix': {'default': 0.5, 'vals': [0.0, 1.0]},
                 'simulate:zero-share': {'default': 0.7, 'vals': [0.0, 0.99]},
                 'simulate:max-entry': {'default': 2, 'vals': [1, 1000]},
                 'simulate:rand-offdiag': {'default': 0.15, 'vals': [0.0, 10.0]},
                 'simulate:delta-low': {'default': 1.0, 'vals': [1e-12, 1e6]},
                 'simulate:delta-high': {'default': 3.0, 'vals': [1e-12, 1e6]},
                 'simulate:pd-floor': {'default': 0.05, 'vals': [1e-6, 10.0]},
                 'simulate:proxy-alpha': {'default': 0.05, 'vals': [1e-12, 0.5]},
                 'simulate:proxy-strength': {'default': 0.3, 'vals': [0.0, 10.0]},
                 'simulate:max-failure-share': {'default': 0.01, 'vals': [0.0, 1.0]},
                 'simulate:force-identity': {'default': False, 'vals': (True, False)},

                 'proxy:alpha-c': {'default': 0.01, 'vals': [1e-12, 0.5]},
                 'proxy:alpha-l': {'default': 0.01, 'vals': [1e-12, 0.5]},
                 'proxy:normalize': {'default': False, 'vals': (True, False)},
                 'proxy:format': {'default': 'coordinates', 'vals': ('coordinates', 'dense', 'both')},
                 'proxy:path': {'default': 'sparse', 'vals': ('sparse', 'dense')},

                 'panel:min-transactions': {'default': 100, 'vals': [0, 10 ** 9]},
                 'panel:drop-zero-price': {'default': True, 'vals': (True, False)},
                 'panel:drop-constant-price': {'default': True, 'vals': (True, False)},
                 'panel:require-competitor': {'default': True, 'vals': (True, False)},

                 'estimate:pca-variance-target': {'default': 0.9, 'vals': [1e-6, 1.0]},
                 'estimate:price-components': {'default': 10, 'vals': [0, 1000]},
                 'estimate:j-max': {'default': 2, 'vals': [0, 10]},
                 'estimate:proxy': {'default': 'auto', 'vals': ('auto', 'c', 's', 'both')},
                 'estimate:include-fe': {'default': True, 'vals': (True, False)},
                 'estimate:cluster-key': {'default': ['store_id', 'quarter'], 'vals': list},
                 'estimate:max-rounds': {'default': 10, 'vals': [1, 1000]},
                 'estimate:cf-tol': {'default': 1e-6, 'vals': [1e-14, 1.0]},
                 'estimate:lf-projector': {'default': 'exact', 'vals': ('exact', 'context')},
                 'estimate:alpha-grid': {'default': [], 'vals': list},
                 'estimate:ownership': {'default': 'singleton', 'vals': ('singleton', 'store')},
                 'estimate:participation-max-lag': {'default': 2, 'vals': [0, 8]},
                 'estimate:transition-bins': {'default': 5, 'vals': [2, 100]},

                 'counterfactual:a': {'default': [[2, 0, 1, 2], [2, 2, 2, 4], [0, 2, 1, 2]], 'vals': list},
                 'counterfactual:m': {'default': [[1.0, 0.1, 0.1], [0.1, 1.0, 0.1], [0.1, 0.1, 1.0]], 'vals': list},
                 'counterfactual:delta': {'default': [2.0, 2.0, 2.0], 'vals': list},
                 'counterfactual:phi': {'default': -0.1, 'vals': [-1e6, -1e-12]},
                 'counterfactual:goods': {'default': ['milk', 'bacon', 'pasta'], 'vals': list},
                 'counterfactual:firms': {'default': [], 'vals': list},
                 'counterfactual:stockouts': {'default': [], 'vals': list},
                 'counterfactual:quantity-scale': {'default': 0.5, 'vals': [0.0, 10.0]},

                 'screen:confidence': {'default': [0.9, 0.95, 0.99], 'vals': list},
                 'screen:threshold': {'default': [0.01, 0.001, 0.0001], 'vals': list},
                 }

SECTIONS = tuple(dict.fromkeys(k.split(':')[0] for k in SETTING_RULES))


def _flatten(tree, prefix=''):
    flat = {}
    for k, v in (tree or {}).items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and f"{key}" not in SETTING_RULES:
            flat.update(_flatten(v, f"{key}:"))
        else:
            flat[key] = v
    return flat


def _plain(value):
    """ruamel round-trip containers to plain python."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def parse_value(text):
    """Parse a --set value with YAML scalar rules (numbers, booleans, lists)."""
    try:
        return _plain(YAML(typ='safe').load(text))
    except YAMLError as e:
        raise ConfigError(f"could not parse override value {text!r}: {e}") from e


def check_setting(key, value):
    if key not in SETTING_RULES:
        raise ConfigError(f"unknown setting {key}")
    vals = SETTING_RULES[key]['vals']
    default = SETTING_RULES[key]['default']
    if isinstance(vals, list):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and value != int(value):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        if not vals[0] <= value <= vals[1]:
            raise ConfigError(f"{key}={value} is outside [{vals[0]}, {vals[1]}]")
        return int(value) if isinstance(default, int) else float(value)
    if isinstance(vals, tuple):
        if value not in vals or (isinstance(value, bool) != isinstance(vals[0], bool)):
            raise ConfigError(f"{key}={value!r} is not one of {list(vals)}")
        return value
    if vals is str and value is None:
        return ''
    if not isinstance(value, vals):
        raise ConfigError(f"{key} must be a {vals.__name__}, got {value!r}")
    return value


class RunConfig:
    """Resolved, validated settings for one run."""

    def __init__(self, settings=None, source=None):
        resolved = {k: deepcopy(rule['default']) for k, rule in SETTING_RULES.items()}
        for key, value in (settings or {}).items():
            resolved[key] = check_setting(key, value)
        self._settings = resolved
        self.source = source

    @classmethod
    def load(cls, path=None, overrides=None):
        """Read a YAML config (or only the rule defaults when path is None) and apply overrides."""
        settings = {}
        if path is not None:
            try:
                with open(path) as f:
                    tree = _plain(YAML(typ='safe').load(f)) or {}
            except FileNotFoundError:
                raise ConfigError(f"config file {path} does not exist") from None
            except YAMLError as e:
                raise ConfigError(f"config file {path} is not valid YAML: {e}") from e
            if not isinstance(tree, dict):
                raise ConfigError(f"config file {path} must hold a mapping")
            defaults = tree.pop('defaults', {}) or {}
            settings.update(_flatten(defaults))
            settings.update(_flatten(tree))
        settings.update(overrides or {})
        config = cls(settings, source=path)
        getLogger(__name__).debug(f"configuration resolved from {path or 'built-in defaults'}, digest {config.digest()[:12]}")
        return config

    def get(self, key):
        try:
            return self._settings[key]
        except KeyError:
            raise ConfigError(f"unknown setting {key}") from None

    def section(self, name):
        if name not in SECTIONS:
            raise ConfigError(f"unknown section {name}")
        prefix = f"{name}:"
        return {k[len(prefix):]: v for k, v in self._settings.items() if k.startswith(prefix)}

    def with_overrides(self, overrides):
        return RunConfig({**self._settings, **overrides}, source=self.source)

    def as_dict(self):
        return dict(self._settings)

    def digest(self):
        canonical = json.dumps(self._settings, sort_keys=True, separators=(',', ':'), default=str)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
