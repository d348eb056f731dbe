"""Criterion-bounded non-sampling collaborative filtering for multi-behavior feedback."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericalError
from .losses import (
    BoundParams,
    LossConfig,
    PENALTIES,
    get_penalty,
    POSITIVITY_FLOOR,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "BoundParams",
    "LossConfig",
    "PENALTIES",
    "get_penalty",
    "POSITIVITY_FLOOR",
    "__version__",
]
