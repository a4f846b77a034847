"""Exception types shared across the library.

The CLI maps these onto process exit codes, so every operation raises one
of them (or a plain OSError for file-system trouble) instead of letting
numpy errors bubble up with less context.
"""


class SepkitError(Exception):
    """Base class for all library errors."""


class DimensionError(SepkitError, ValueError):
    """Shapes, dims, or channel counts violate an operation's contract."""


class NumericError(SepkitError, ArithmeticError):
    """Non-finite values reached an operation boundary."""


class ConfigError(SepkitError, ValueError):
    """A graph config file failed validation."""
