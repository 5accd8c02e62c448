"""Hybrid CNN/CRATE self-supervised monocular depth estimation."""

from ._core import (
    CheckpointError,
    ConfigError,
    ShapeError,
    cli,
    coding_rate,
    compute_metrics,
    count_parameters,
    default_config,
    ista_step,
    predict_disparity,
    toy_config,
    toy_scene,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ShapeError",
    "cli",
    "coding_rate",
    "compute_metrics",
    "count_parameters",
    "default_config",
    "ista_step",
    "predict_disparity",
    "toy_config",
    "toy_scene",
]
