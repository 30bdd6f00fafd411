"""Exception types raised across the package."""


class SelfPUError(Exception):
    """Base class for all package errors."""


class ShapeError(SelfPUError, ValueError):
    pass


class NumericError(SelfPUError, ArithmeticError):
    pass


class BatchCompositionError(SelfPUError, ValueError):
    pass


class PartitionError(SelfPUError, ValueError):
    pass


class ScheduleError(SelfPUError, ValueError):
    pass


class ConfigError(SelfPUError, ValueError):
    pass


class FormatError(SelfPUError, ValueError):
    """Malformed data file (bad magic, truncation, count mismatch)."""


class CheckpointError(SelfPUError, ValueError):
    pass
