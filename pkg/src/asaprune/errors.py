"""Exception types shared across the package.

The CLI maps ShapeError/ConfigError/MatrixFormatError to exit code 2
(usage or input validation); anything else is an internal error (exit 1).
"""


class AsapruneError(Exception):
    """Base class for all package errors."""


class ShapeError(AsapruneError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class ConfigError(AsapruneError, ValueError):
    """A parameter is outside its documented range."""


class ScheduleError(ConfigError):
    """A pruning schedule is inconsistent with the model configuration."""


class MatrixFormatError(AsapruneError, ValueError):
    """A serialized matrix file is malformed; message names the byte offset."""
