"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A caller-supplied parameter violates an operation's contract."""


class InvalidCovarianceError(ValueError):
    """A covariance spectrum or matrix is not positive definite."""


class NumericalError(RuntimeError):
    """A numerical routine failed beyond recoverable tolerance."""


class ConfigError(ValueError):
    """An experiment configuration is inconsistent or incomplete."""
