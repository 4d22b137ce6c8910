"""Exception hierarchy shared by the library and the CLI."""


class CovgrowError(Exception):
    """Base class for all package errors."""


class DomainError(CovgrowError, ValueError):
    """A time lies outside the spline domain."""


class DataError(CovgrowError, ValueError):
    """Malformed dataset or inconsistent individual records."""


class ConfigError(CovgrowError, ValueError):
    """Malformed or inconsistent model configuration."""


class IdentifiabilityError(CovgrowError):
    """The penalized normal equations are singular.

    Attributes
    ----------
    direction : numpy.ndarray or None
        A unit vector (effective parameterization) spanning the null space, if known.
    labels : list of str or None
        Names of the direction's components, when the system is known.
    """

    def __init__(self, message, direction=None, labels=None):
        super().__init__(message)
        self.direction = direction
        self.labels = labels


class SelectionError(CovgrowError):
    """Smoothing-parameter selection failed and no fallback was allowed."""
