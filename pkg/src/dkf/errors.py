"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A configuration, dimension, or invariant check failed."""


class NumericalError(RuntimeError):
    """A matrix operation failed (singular or indefinite input).

    The message carries sensor/time context when available.
    """
