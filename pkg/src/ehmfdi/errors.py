"""Exception types raised across the package."""


class EhmError(Exception):
    """Base class for all package errors."""


class DomainError(EhmError, ValueError):
    """A model quantity left its physically valid domain."""


class ConvergenceError(EhmError, RuntimeError):
    """An iterative solver failed to converge."""


class ConfigError(EhmError, ValueError):
    """Invalid or inconsistent configuration."""


class DivergenceError(EhmError, RuntimeError):
    """The state estimator left the valid state domain or lost covariance definiteness."""


class NotPositiveDefiniteError(EhmError, ValueError):
    """A covariance estimate is not positive definite."""


class DegenerateColumnError(EhmError, ValueError):
    """A sensitivity column is identically zero, so the parameter is unidentifiable."""
