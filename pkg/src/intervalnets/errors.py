"""Exception types mapped to CLI exit codes (usage 2, data 3, numeric 4)."""


class ConfigError(Exception):
    """Invalid run configuration or command usage."""


class DataError(Exception):
    """Unreadable, malformed, or inconsistent input data."""


class NumericError(Exception):
    """Non-finite values encountered during training or evaluation."""
