"""Exception hierarchy shared by every comet module.

The CLI maps these onto process exit codes: configuration/usage problems
exit 1, data problems exit 2, numeric/model problems exit 3.
"""


class CometError(Exception):
    """Base class for all comet errors."""


class ConfigError(CometError):
    """Invalid configuration value or combination."""


class ShapeError(CometError):
    """Array dimensions incompatible with the requested operation."""


class DataError(CometError):
    """Malformed, missing, or inconsistent input data."""


class NumericError(CometError):
    """Non-finite values or numerically invalid state."""


class DegenerateModelError(NumericError):
    """Model state unusable, e.g. a scale whose codebook was never activated."""


class CheckpointFormatError(CometError):
    """Checkpoint file is corrupt or not a checkpoint at all."""


class CheckpointVersionError(CheckpointFormatError):
    """Checkpoint was written by an incompatible format version."""


class MetricError(CometError):
    """Metric undefined for the given labels (e.g. a single class present)."""
