"""Exception hierarchy shared across the package."""


class ZopoError(Exception):
    """Base class for all package errors."""


class PoolError(ZopoError, ValueError):
    """Malformed or inconsistent candidate pool input."""


class PoolExhausted(ZopoError):
    """Every candidate in the pool has been excluded."""


class NumericalFailure(ZopoError):
    """A linear system stayed singular after jitter."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EvaluatorError(ZopoError):
    """An objective could not produce a score (run-fatal)."""


class ConfigError(ZopoError, ValueError):
    """Invalid run or experiment configuration."""
