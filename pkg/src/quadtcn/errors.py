"""Exception hierarchy shared across the package.

Each family maps to one CLI exit code (see ``quadtcn.harness.cli``).
"""


class QuadTCNError(Exception):
    """Base class for all package errors."""


class ConfigError(QuadTCNError):
    """Invalid or inconsistent configuration."""


class DataError(QuadTCNError):
    """Malformed input data (telemetry, datasets, windows)."""


class ShapeError(DataError, ValueError):
    """Array shapes or lengths do not match an operation's contract."""


class TelemetryError(DataError):
    """A telemetry file failed schema or content validation."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericFault(QuadTCNError, ArithmeticError):
    """Non-finite values appeared, or a numeric singularity was hit."""


class GimbalLockError(NumericFault):
    """Pitch too close to +/-90 degrees for the Euler-rate inverse."""


class RankDeficientError(NumericFault):
    """The identification Jacobian does not have full column rank."""


class CheckpointError(QuadTCNError, OSError):
    """Checkpoint file is corrupt, truncated, or of the wrong version/kind."""
