"""Distributed Kalman filtering for uncertain systems over switching
sensor networks with quantized inter-sensor communication."""

from .errors import NumericalError, ValidationError
from .model import (
    ExtendedModel,
    SystemModel,
    build_extended_model,
    check_collective_observability,
    check_rank_condition,
    find_lss,
)
from .scenario import ScenarioConfig, load_scenario, preset, simulate_truth
from .runner import ALGO_KEYS, run_monte_carlo

__all__ = [
    "ALGO_KEYS",
    "ExtendedModel",
    "NumericalError",
    "ScenarioConfig",
    "SystemModel",
    "ValidationError",
    "build_extended_model",
    "check_collective_observability",
    "check_rank_condition",
    "find_lss",
    "load_scenario",
    "preset",
    "run_monte_carlo",
    "simulate_truth",
]
