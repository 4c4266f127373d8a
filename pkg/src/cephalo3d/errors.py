"""Exception types shared across the package.

Each error maps to a distinct CLI exit code (see ``cephalo3d.cli``).
"""


class CephaloError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(CephaloError, ValueError):
    exit_code = 13


class ConfigError(CephaloError, ValueError):
    exit_code = 3


class ShapeError(CephaloError, ValueError):
    exit_code = 4


class DimensionOverflowError(ShapeError):
    """Volume is larger than the fixed network grid; resample first."""

    exit_code = 5


class StateError(CephaloError, RuntimeError):
    exit_code = 6


class OutOfBoundsError(CephaloError, IndexError):
    """A landmark fell outside the voxel grid."""

    exit_code = 7

    def __init__(self, message, landmark=None):
        super().__init__(message)
        self.landmark = landmark


class SampleRejected(OutOfBoundsError):
    """Augmentation moved a landmark out of the grid."""


class TrainingDivergedError(CephaloError, FloatingPointError):
    exit_code = 8


class IncompleteDataError(CephaloError, ValueError):
    exit_code = 9


class DegenerateDataError(CephaloError, ValueError):
    exit_code = 10


class InsufficientDataError(CephaloError, ValueError):
    exit_code = 11


class FileFormatError(CephaloError, ValueError):
    exit_code = 12
