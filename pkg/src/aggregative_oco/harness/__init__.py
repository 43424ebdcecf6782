"""Experiment configs, trace files and the command line interface."""

from .config import ConfigError, ExperimentConfig, load_config, parse_stepsize
from .experiments import (
    best_response_dynamics,
    experiment_example1,
    experiment_quadratic_synthetic,
    experiment_target_surrounding,
    nash_gap,
)
from .io import TraceFormatError, read_trace, write_trace
from .runner import run_experiment, trace_metrics

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_stepsize",
    "best_response_dynamics",
    "nash_gap",
    "experiment_example1",
    "experiment_quadratic_synthetic",
    "experiment_target_surrounding",
    "TraceFormatError",
    "read_trace",
    "write_trace",
    "run_experiment",
    "trace_metrics",
]
