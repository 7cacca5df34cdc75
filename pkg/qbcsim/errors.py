"""
Error Types
===========
Exception hierarchy shared by the engine, protocol and harness.
Each error carries the CLI exit code it maps to.
"""


class QBCError(Exception):
    """Base class for simulator errors."""
    exit_code = 4


class InvalidParams(QBCError):
    """Raised when an operation receives out-of-range parameters."""
    exit_code = 2


class ConfigError(QBCError):
    """Raised when a config file cannot be read or parsed."""
    exit_code = 2


class ConfigGuard(InvalidParams):
    """Raised when the t1 << tau guard trips."""
    pass


class GridTooNarrow(InvalidParams):
    """Raised when a packet does not decay to ~0 at the grid boundary."""
    pass


class DegeneratePattern(QBCError):
    """Raised when a pattern carries no usable weight or structure."""
    pass


class StateMismatch(QBCError):
    """Raised when Alice's private state lacks a detected trial's datum."""
    pass


class SessionMismatch(QBCError):
    """Raised when transcript and unveil belong to different sessions."""
    pass


class UncalibratedQuantiles(QBCError):
    """Raised when the honest-quantile cache is missing for a config."""
    exit_code = 3


class InvariantViolation(QBCError):
    """Raised when an internal invariant does not hold."""
    pass


class FarFieldViolation(UserWarning):
    """Emitted when L is not large compared to d^2 / lambda."""
    pass
