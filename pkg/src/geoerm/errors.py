"""Exception types shared across the package."""


class GeoermError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GeoermError, ValueError):
    """Operands have incompatible or invalid shapes."""


class DegenerateMatrixError(GeoermError):
    """A matrix is (numerically) rank deficient where full column rank is required."""


class NotPositiveDefiniteError(GeoermError):
    """A matrix that must be symmetric positive definite is not."""


class PowerIterationError(GeoermError):
    """Power iteration failed to converge within its step budget."""


class DivergenceError(GeoermError):
    """A non-finite gradient appeared during optimization."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class KindMismatchError(GeoermError, ValueError):
    """A task was passed to a loss of the wrong kind, or carries invalid labels."""


class ConfigurationError(GeoermError, ValueError):
    """An experiment or solver configuration is invalid."""


class IngestionError(GeoermError):
    """A data file could not be parsed; the message names file and line."""
