"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters more than the message text.
"""


class SkycastError(Exception):
    """Base class for all package errors."""


class ConfigError(SkycastError):
    """Invalid or inconsistent configuration."""


class DataError(SkycastError):
    """Malformed, missing, or contradictory input data."""


class NumericsError(SkycastError):
    """Numerical failure (divergence, non-finite values)."""
