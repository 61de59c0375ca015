"""Exception types shared across the package."""


class MtcrbmError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MtcrbmError):
    """Invalid model, task, or training configuration."""


class ShapeError(MtcrbmError):
    """A parameter block or input array has the wrong shape."""


class DataError(MtcrbmError):
    """Dataset, manifest, or model-file contents are invalid."""


class NumericError(MtcrbmError):
    """Non-finite values were detected during a numeric computation."""
