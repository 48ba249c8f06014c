"""Dynamic parameterized operations for CTR prediction (C++ core)."""

import json
import os

from ._core import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    Error,
    MetricError,
    UsageError,
    auc,
    logloss,
)
from . import _core

__all__ = [
    "Error", "ConfigError", "DimensionError", "UsageError", "DataError",
    "CheckpointError", "MetricError", "DivergenceError",
    "auc", "logloss", "load_config", "resolve_config", "train", "param_counts", "verify",
]


def _text(cfg):
    return cfg if isinstance(cfg, str) else json.dumps(cfg)


def load_config(path):
    """Reads a run config file and returns it fully resolved."""
    with open(os.fspath(path)) as f:
        return resolve_config(json.load(f))


def resolve_config(cfg):
    """Strict parse; every default spelled out."""
    return json.loads(_core._resolve_config(_text(cfg)))


def train(cfg, out=""):
    """Trains and evaluates one run. Returns the metrics dict plus a "timing" entry.

    With a non-empty `out`, the usual run directory is written there as well.
    """
    return json.loads(_core._train(_text(cfg), os.fspath(out)))


def param_counts(model, fields):
    """Parameter counts for a model spec over `fields`, a list of (name, vocab)."""
    return json.loads(_core._param_counts(_text(model), list(fields)))


def verify(suite="all", seed=0, inject_fault=False):
    return json.loads(_core._verify(suite, seed, inject_fault))
