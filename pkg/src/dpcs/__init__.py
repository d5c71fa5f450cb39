"""Multi-agent actor-critic scheduling of household appliance loads under real-time pricing."""
from .agents import AgentSet, Algorithm, NoiseSchedule
from .data import synth_scenario
from .errors import (ConfigurationError, ContractViolation, DPCSError, ImputationError, InsufficientDataError,
                     NumericError)
from .pricing import PriceParams, generation_cost, rtp
from .rewards import LoadStats, RewardParams, par
from .simenv import ApplianceSpec, Category, Household, Scenario
from .trainer import TrainConfig, desk_config, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AgentSet", "Algorithm", "NoiseSchedule", "synth_scenario", "ConfigurationError", "ContractViolation",
    "DPCSError", "ImputationError", "InsufficientDataError", "NumericError", "PriceParams", "generation_cost", "rtp",
    "LoadStats", "RewardParams", "par", "ApplianceSpec", "Category", "Household", "Scenario", "TrainConfig",
    "desk_config", "evaluate", "train",
]
