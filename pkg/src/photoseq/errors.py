"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, NumericalError -> 4.
"""


class PhotoseqError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PhotoseqError):
    """Invalid configuration: bad values, unknown keys, incompatible options."""


class DataError(PhotoseqError):
    """Unusable input data: missing files, malformed corpora, bad captures."""


class IllPosedError(DataError):
    """A calibration or fit has no unique solution for the given data."""


class ShapeError(PhotoseqError, ValueError):
    """Array dimensions violate an operation's contract."""


class WeightError(PhotoseqError):
    """Weight file does not match the expected network configuration."""


class NumericalError(PhotoseqError):
    """A computation produced non-finite values (training aborts here)."""
