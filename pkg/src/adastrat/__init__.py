"""Adaptive stratified Monte Carlo for functions of a standard Gaussian vector."""

from .adapt import AdaptConfig, AdaptReport, run
from .experiments import ExperimentConfig, run_experiment
from .gauss import RandomStream
from .lhs import lhs_estimate
from .payoffs import (AsianPayoff, BarrierPayoff, BasketPayoff, HestonPayoff, apply_drift,
                      optimal_drift)

__all__ = [
    "AdaptConfig",
    "AdaptReport",
    "run",
    "ExperimentConfig",
    "run_experiment",
    "RandomStream",
    "lhs_estimate",
    "AsianPayoff",
    "BarrierPayoff",
    "BasketPayoff",
    "HestonPayoff",
    "apply_drift",
    "optimal_drift",
]
