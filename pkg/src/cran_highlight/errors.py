"""Exception types raised across the package."""


class CranError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CranError, ValueError):
    pass


class InvalidShapeError(CranError, ValueError):
    pass


class InvalidConfigError(CranError, ValueError):
    pass


class CheckpointError(CranError):
    """Checkpoint file is truncated, corrupt or not a checkpoint at all."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version or config hash does not match."""


class CacheError(CranError):
    pass


class ManifestError(CranError, ValueError):
    pass


class UnknownGenreError(ManifestError):
    pass


class DuplicateTrackError(ManifestError):
    pass


class TrainingDivergedError(CranError, RuntimeError):
    pass


class NoAttentionError(CranError):
    """Raised when attention is requested from a variant that has none."""


class MissingGradientError(CranError, RuntimeError):
    """An optimizer step was asked to update a parameter that has no gradient."""
