"""Positive-unlabeled learning with self-paced trusted sets, meta-learned
loss reweighting and two-student / two-teacher distillation."""
from . import datapipe, distill, metaweight, ndnum, pulosses, selfpace
from .errors import (BatchCompositionError, CheckpointError, ConfigError, FormatError, NumericError,
                     PartitionError, ScheduleError, SelfPUError, ShapeError)

__version__ = "0.1.0"
