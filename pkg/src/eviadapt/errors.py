"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class EviAdaptError(Exception):
    """Base class for all package errors."""


class ConfigError(EviAdaptError):
    """Invalid configuration: bad field value, unknown override key, bad flag."""


class DataError(EviAdaptError):
    """Malformed or inconsistent input data, including degenerate stage pools."""


class NumericalError(EviAdaptError):
    """Non-finite values or other numerical failures during optimization."""
