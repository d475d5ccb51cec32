"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation.

    The message names the offending axis or shapes so the failure can be
    located without a debugger.
    """


class ConfigError(ValueError):
    """Raised when a configuration value is outside its documented domain."""


class DataError(ValueError):
    """Raised for malformed datasets or labels.

    Messages include the sample id (or manifest field) that failed so bad
    records can be fixed individually.
    """
