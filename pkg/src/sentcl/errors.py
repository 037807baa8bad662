"""Error categories shared across the package; the CLI maps them to exit codes."""


class ConfigError(Exception):
    """Bad or inconsistent configuration (exit code 2)."""


class DataError(Exception):
    """Malformed or mismatched input data (exit code 3)."""


class NumericError(Exception):
    """Non-finite values where finite math was required (exit code 4)."""
