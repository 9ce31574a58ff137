"""Exception types shared across the package."""


class SplatrankError(Exception):
    """Base class for package-specific failures."""


class DegenerateRotationError(SplatrankError, ValueError):
    """Raised when a zero quaternion cannot define a rotation."""


class ConfigError(SplatrankError, ValueError):
    """Raised for out-of-range or malformed configuration values."""


class StaleRecordsError(SplatrankError, RuntimeError):
    """Raised when backward is run against records from a mutated cloud."""


class EmptyMeshError(SplatrankError, RuntimeError):
    """Raised when a TSDF volume contains no zero crossing to triangulate."""


class MissingPropertyError(SplatrankError, ValueError):
    """Raised when a checkpoint PLY lacks a required vertex property."""


class TrainingDiverged(SplatrankError, RuntimeError):
    """Raised when the optimization loop hits a non-finite loss."""
