"""
kitsim - kinetic traffic simulator with MPC-derived feedback controls
"""

__version__ = "0.1.0"

from .config import RunManifest
from .control import ControlStrategy, DesiredSpeedSpec, StrategyKind, VdMode
from .engine import InitDist, InitKind, ScalingParams, SimConfig, paired_run, paired_runs, run
from .errors import BoundViolationError, ConfigError, KitsimError, ParameterDomainError, RunError, UsageError
from .kernel import KernelParams

__all__ = [
    "BoundViolationError",
    "ConfigError",
    "ControlStrategy",
    "DesiredSpeedSpec",
    "InitDist",
    "InitKind",
    "KernelParams",
    "KitsimError",
    "ParameterDomainError",
    "RunError",
    "RunManifest",
    "ScalingParams",
    "SimConfig",
    "StrategyKind",
    "UsageError",
    "VdMode",
    "paired_run",
    "paired_runs",
    "run",
]
