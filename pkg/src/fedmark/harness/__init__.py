"""Experiment runner and command-line interface."""

from fedmark.harness.config import ExperimentConfig, apply_overrides, load_config
from fedmark.harness.runner import run_experiment, sweep_patch_params

__all__ = [
    "ExperimentConfig",
    "apply_overrides",
    "load_config",
    "run_experiment",
    "sweep_patch_params",
]
