"""Python bindings for the haemsa C++ core.

Configurations and results cross the boundary as JSON; the helpers below
accept and return plain dicts.
"""

import json as _json

from ._core import (
    ConfigError,
    FormatError,
    HaemsaError,
    ablation_modes,
    bin_sentiment,
    generate_data,
    kl_divergence,
)
from . import _core

__all__ = [
    "ConfigError",
    "FormatError",
    "HaemsaError",
    "ablation_modes",
    "bin_sentiment",
    "default_config",
    "evaluate_checkpoint",
    "evaluate_metrics",
    "generate_data",
    "kl_divergence",
    "resolve_config",
    "run_experiment",
]


def default_config():
    return _json.loads(_core.default_config_json())


def resolve_config(config):
    """Fills defaults and validates; unknown keys raise ConfigError."""
    return _json.loads(_core.resolve_config_json(_json.dumps(config)))


def run_experiment(config):
    """Runs all seeds and returns the metrics summary (mean, std, per seed)."""
    return _json.loads(_core.run_experiment_json(_json.dumps(config)))


def evaluate_checkpoint(checkpoint, data_dir, split="test"):
    return _json.loads(_core.evaluate_checkpoint_json(str(checkpoint), str(data_dir), split))


def evaluate_metrics(score_preds, score_labels, class_preds, class_labels, num_classes=6):
    return _json.loads(
        _core.evaluate_metrics_json(
            list(score_preds), list(score_labels), list(class_preds), list(class_labels), num_classes
        )
    )
