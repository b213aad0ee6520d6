"""
Error types shared across the event pipeline.

ConfigError maps to CLI exit code 2, DataError (and subclasses) to exit code 3.
"""

from typing import Optional


class EventPipelineError(Exception):
    """Base class for every error raised on purpose by this package"""


class ConfigError(EventPipelineError, ValueError):
    """Invalid or unknown configuration value"""


class DataError(EventPipelineError, ValueError):
    """Input data cannot be processed as given"""


class MalformedFileError(DataError):
    pass


class OutOfRangeError(DataError):
    """Event address outside the sensor, with the byte offset of the bad word"""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class EncodeError(DataError):
    pass


class TimestampOrderError(DataError):
    pass


class NegativeAgeError(DataError):
    pass


class UndefinedVelocityError(DataError):
    pass


class UndefinedSlopeError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class InsufficientFramesError(DataError):
    pass
