"""Exception types shared across the package.

The CLI maps each of these to its own exit code.
"""


class ConfigError(ValueError):
    """Invalid configuration or hyperparameter value."""


class DataError(ValueError):
    """Malformed, inconsistent, or empty input data."""


class NumericError(RuntimeError):
    """A non-finite value appeared where a finite one is required."""
