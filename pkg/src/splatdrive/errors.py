"""Exception types shared across the package."""


class SplatDriveError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SplatDriveError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(SplatDriveError, ValueError):
    """A configuration is inconsistent (detected at construction time)."""


class SegmentationFailedError(SplatDriveError, RuntimeError):
    """Ground segmentation could not find a dominant plane."""


class MissingPoseError(SplatDriveError, KeyError):
    """An object has no pose for the requested timestep."""


class RestorationFailedError(SplatDriveError, RuntimeError):
    """The external restorer command failed or produced no output."""


class DatasetError(SplatDriveError, RuntimeError):
    """A dataset directory is missing or malformed."""
