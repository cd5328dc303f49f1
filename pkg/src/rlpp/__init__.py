"""Point-process learning with a recurrent stochastic policy trained by policy
gradient against an analytic RKHS reward, plus simulators, likelihood
baselines and model checking tools."""
from ._backend import BACKEND, get_threads, set_threads
from .core import Dataset, EventSequence, InterEventTimes, from_gaps, to_gaps, validate
from .errors import (
    DegenerateData,
    DominatingRateOverflow,
    FileFormatError,
    InsufficientData,
    NegativeIntensity,
    NonConvergence,
    NonFiniteUpdate,
    NonMonotonic,
    NumericalError,
    OutOfWindow,
    RLPPError,
    RolloutOverflow,
    UnknownPreset,
    ValidationError,
)
from .kernel import KernelConfig, RewardEstimator, median_bandwidth, mmd_squared
from .policy import PolicyParams, rollout, rollouts
from .rng import RngStream
from .simulate import preset, simulate_dataset
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "get_threads",
    "set_threads",
    "Dataset",
    "EventSequence",
    "InterEventTimes",
    "from_gaps",
    "to_gaps",
    "validate",
    "DegenerateData",
    "DominatingRateOverflow",
    "FileFormatError",
    "InsufficientData",
    "NegativeIntensity",
    "NonConvergence",
    "NonFiniteUpdate",
    "NonMonotonic",
    "NumericalError",
    "OutOfWindow",
    "RLPPError",
    "RolloutOverflow",
    "UnknownPreset",
    "ValidationError",
    "KernelConfig",
    "RewardEstimator",
    "median_bandwidth",
    "mmd_squared",
    "PolicyParams",
    "rollout",
    "rollouts",
    "RngStream",
    "preset",
    "simulate_dataset",
    "TrainConfig",
]
