"""Exception types that the CLI maps to distinct exit codes."""


class ConfigError(ValueError):
    """Invalid run configuration (bad keys, types, or ranges). Exit code 2."""


class DataError(ValueError):
    """Malformed or missing input data file. Exit code 3."""


class NumericError(ArithmeticError):
    """Non-finite value encountered during computation. Exit code 4."""
