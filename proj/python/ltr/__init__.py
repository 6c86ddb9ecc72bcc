"""Latent-thought model with inference-time rethinking."""

import json

from . import _core
from ._core import (
    CheckpointError,
    ConfigError,
    Model,
    SchemaError,
    detokenize,
    evaluate_trace,
    extract_answer,
    grad_check,
    kl_standard_normal,
    load_jsonl,
    tokenize,
    vocab_size,
)

__version__ = _core.version()


def default_config():
    return json.loads(_core.default_config_json())


def resolve_config(config):
    """Validate a run config dict and return it with defaults filled in."""
    return json.loads(_core.resolve_config_json(json.dumps(config)))


def generate_problems(config=None):
    """Splits {train, val, test, extrap} as lists of problem dicts."""
    cfg = default_config() if config is None else config
    return _core.generate_problems(json.dumps(cfg))


def verify_theory(seed=7, models=20, iters=50):
    return json.loads(_core.verify_theory(seed, models, iters))


__all__ = [
    "CheckpointError",
    "ConfigError",
    "Model",
    "SchemaError",
    "default_config",
    "detokenize",
    "evaluate_trace",
    "extract_answer",
    "generate_problems",
    "grad_check",
    "kl_standard_normal",
    "load_jsonl",
    "resolve_config",
    "tokenize",
    "verify_theory",
    "vocab_size",
]
