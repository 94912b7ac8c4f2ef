"""Exception types shared across the package, mapped onto CLI exit codes."""


class KelpError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(KelpError):
    """Invalid configuration or usage."""

    exit_code = 2


class DataError(KelpError):
    """Malformed input data, parse failures, shape mismatches."""

    exit_code = 3


class NumericalError(KelpError):
    """Non-finite or degenerate numerical state."""

    exit_code = 4
