"""Exception hierarchy shared by every vqrim module."""


class VqRimError(Exception):
    """Base class for all errors raised by vqrim."""


class ShapeError(VqRimError, ValueError):
    """Array dimensions do not agree."""


class StateError(VqRimError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class TrainingError(VqRimError, FloatingPointError):
    """Non-finite values appeared during optimization."""


class ConfigError(VqRimError, ValueError):
    """Invalid configuration value."""


class InputError(VqRimError, ValueError):
    """Invalid user-supplied data."""


class DegenerateClusteringError(VqRimError):
    """Every class fell below the pruning threshold."""


class CheckpointError(VqRimError, IOError):
    """Checkpoint file is corrupt, truncated or of an unsupported version."""


class NumericError(VqRimError, ArithmeticError):
    """A numerical routine failed to converge."""


class MetricError(VqRimError, ValueError):
    """A metric is undefined for the given input."""
