"""Attention-augmented normalizing-flow anomaly detection (C++ core)."""

from ._core import (
    Checkpoint,
    ConfigError,
    Flow,
    IoError,
    InputError,
    MetricError,
    NumericalError,
    attention,
    auroc,
    load_config,
    synth,
    train,
    version,
)

__version__ = version()

__all__ = [
    "Checkpoint",
    "ConfigError",
    "Flow",
    "IoError",
    "InputError",
    "MetricError",
    "NumericalError",
    "attention",
    "auroc",
    "load_config",
    "synth",
    "train",
    "version",
]
