"""Exception hierarchy shared by the library and the command line tool.

Each class maps to one process exit code so shell callers can branch on
the kind of failure without parsing messages.
"""


class GeopriceError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(GeopriceError):
    """Bad configuration: unknown keys, malformed values, missing settings."""

    exit_code = 2


class DataError(GeopriceError):
    """Bad input data: malformed files, empty sets, violated preconditions."""

    exit_code = 3


class NumericError(GeopriceError):
    """Numerical failure: divergence, singular systems, estimates at bounds."""

    exit_code = 4
