"""Sensor polling schedulers that minimise the age of information at a base station."""

from ._validation import ConfigurationError
from .bandit import BanditConfig, BanditDivergenceError, BanditParams, EpsilonGreedyPolicy
from .harness import (
    ExperimentResult,
    ExperimentSpec,
    RunSummary,
    make_policy,
    run_experiment,
    run_replication,
    validate_oracles,
)
from .model import SystemConfig, WorldState, half_power_probs, new_world
from .policies import (
    Action,
    GeniePolicy,
    MaxSigmaPolicy,
    OptimalPolicy,
    PolicyKind,
    RandomPolicy,
    SchedulerView,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "BanditConfig",
    "BanditDivergenceError",
    "BanditParams",
    "ConfigurationError",
    "EpsilonGreedyPolicy",
    "ExperimentResult",
    "ExperimentSpec",
    "GeniePolicy",
    "MaxSigmaPolicy",
    "OptimalPolicy",
    "PolicyKind",
    "RandomPolicy",
    "RunSummary",
    "SchedulerView",
    "SystemConfig",
    "WorldState",
    "half_power_probs",
    "make_policy",
    "new_world",
    "run_experiment",
    "run_replication",
    "validate_oracles",
]
