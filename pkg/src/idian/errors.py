"""Exception types shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class IdianError(Exception):
    exit_code = 1


class ConfigError(IdianError, ValueError):
    """Bad dimensions, invalid hyperparameters, malformed config files."""

    exit_code = 2


class DataError(IdianError, ValueError):
    """Unreadable or malformed dataset files."""

    exit_code = 3


class NumericError(IdianError, ArithmeticError):
    """Non-finite losses or gradients, failed gradient checks."""

    exit_code = 4


class UsageError(IdianError, RuntimeError):
    """An operation was called in a state where it is not defined."""

    exit_code = 2
