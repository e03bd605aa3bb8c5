"""VAE-parameterized MMSE channel estimation for underdetermined pilot systems."""

from . import channels, covariance, estimators, fileio, observation
from .errors import (
    ConfigError,
    InvalidCovarianceError,
    InvalidParameterError,
    NumericalError,
)

__version__ = "0.1.0"

__all__ = [
    "channels",
    "covariance",
    "estimators",
    "fileio",
    "observation",
    "ConfigError",
    "InvalidCovarianceError",
    "InvalidParameterError",
    "NumericalError",
    "__version__",
]
