"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class GavaError(Exception):
    """Base class for all package errors."""


class ConfigError(GavaError):
    """Invalid or inconsistent configuration."""


class DataError(GavaError):
    """Malformed or inconsistent input data."""


class SchemaError(DataError):
    """Input file does not match the configured column schema."""


class NumericError(GavaError):
    """A numeric operation produced NaN/Inf or an otherwise invalid state."""


class DimensionError(GavaError):
    """Shape or contract violation in a tensor operation."""
