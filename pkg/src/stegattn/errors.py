"""Exception hierarchy shared by every stegattn module."""


class StegError(Exception):
    """Base class for all package errors."""


class ShapeError(StegError, ValueError):
    """Tensor extents are incompatible with an operation."""


class UsageError(StegError):
    """An API or CLI was called in a way its contract forbids."""


class DataError(StegError):
    """Input data (images, datasets) could not be used."""


class NumericError(StegError, ArithmeticError):
    """A computation produced a non-finite value."""


class CheckpointError(StegError):
    """A checkpoint file could not be read or validated."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointLengthError(CheckpointError):
    """Manifest and payload lengths disagree."""


class CheckpointCorruptError(CheckpointError):
    """Magic bytes or payload checksum are wrong."""


class CheckpointShapeError(CheckpointError, ShapeError):
    """A stored parameter has a different shape than the model expects."""


class InsufficientDataError(UsageError, DataError):
    """A dataset has too few usable images (a usage error that the CLI reports as a data failure)."""
