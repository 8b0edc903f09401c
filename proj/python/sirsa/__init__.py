"""Python access to the point-mass robust RL core."""

import json

from ._sirsa import (
    ConfigError,
    PointMassEnv,
    empirical_cvar,
    empirical_var,
    gaussian_cvar,
    misspecified_contexts,
    std_normal_cdf,
    std_normal_inverse_cdf,
)
from . import _sirsa

__all__ = [
    "ConfigError",
    "PointMassEnv",
    "config_hash",
    "empirical_cvar",
    "empirical_var",
    "evaluate",
    "gaussian_cvar",
    "misspecified_contexts",
    "normalize_config",
    "std_normal_cdf",
    "std_normal_inverse_cdf",
    "train",
]


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config)


def config_hash(config):
    return _sirsa.config_hash(_dump(config))


def normalize_config(config):
    """Config with every default filled in."""
    return json.loads(_sirsa.normalize_config(_dump(config)))


def train(config, seed=0):
    """Train one seed and return the checkpoint dict."""
    return json.loads(_sirsa.train(_dump(config), seed))


def evaluate(config, checkpoint, seed=0):
    """Evaluate a checkpoint on the config's test suite; one report per risk level."""
    return json.loads(_sirsa.evaluate(_dump(config), _dump(checkpoint), seed))
