"""Exception hierarchy; each class carries the CLI exit status it maps to."""


class MultiAcctError(Exception):
    exit_code = 1


class ConfigError(MultiAcctError, ValueError):
    """Invalid parameter or configuration."""

    exit_code = 2


class DataError(MultiAcctError, ValueError):
    """Input data violates a structural precondition."""

    exit_code = 3


class ConvergenceError(MultiAcctError, RuntimeError):
    exit_code = 4
