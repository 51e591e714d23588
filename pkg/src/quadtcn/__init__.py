"""Multi-step quadrotor motion prediction with temporal convolutional networks,
a Newton-Euler physics model and hybrids of the two."""

from . import dataset, hybrid, physics, quadstate, tcn
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    GimbalLockError,
    NumericFault,
    QuadTCNError,
    RankDeficientError,
    ShapeError,
    TelemetryError,
)

__version__ = "0.1.0"

__all__ = [
    "dataset", "hybrid", "physics", "quadstate", "tcn", "CheckpointError", "ConfigError", "DataError",
    "GimbalLockError", "NumericFault", "QuadTCNError", "RankDeficientError", "ShapeError", "TelemetryError",
]
