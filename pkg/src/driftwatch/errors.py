"""Exception hierarchy shared across the package."""


class DriftwatchError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(DriftwatchError):
    """Invalid configuration value, file, or constructor argument."""


class DegenerateGeometryError(DriftwatchError):
    """Geometry too degenerate to evaluate (coincident points, zero ranges)."""


class SingularGeometryError(DriftwatchError):
    """Normal equations are numerically singular for the current geometry."""


class DimensionMismatchError(DriftwatchError):
    """Array shape does not match what the layer or operation expects."""


class NotConvergedError(DriftwatchError):
    """A solver result was required to be converged but is not."""


class InsufficientDataError(DriftwatchError):
    """Not enough samples to fit a profile or model."""


class CorruptCheckpointError(DriftwatchError):
    """Checkpoint or model artifact failed to load or validate."""
