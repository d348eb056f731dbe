"""Exception types shared across the package.

Each maps to one CLI exit code: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class ConfigError(Exception):
    """Invalid configuration value, flag, or option combination."""


class DataError(Exception):
    """Malformed or inconsistent input data."""


class NumericalError(Exception):
    """Non-finite value encountered where a finite one is required."""
