"""Exception hierarchy shared across the package."""


class BapleError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BapleError):
    """Invalid configuration value; message names the offending field."""


class DimensionError(BapleError):
    """Array shape incompatible with the requested operation."""


class InsufficientDataError(BapleError):
    """A class has fewer samples than the requested draw."""


class ArtifactFormatError(BapleError):
    """On-disk artifact is corrupt, truncated, or has the wrong version."""


class TokenizerError(BapleError):
    """A token is not present in the vocabulary."""


class TrainingError(BapleError):
    """Training diverged (non-finite loss); message carries the epoch index."""


class NumericalError(BapleError):
    """Non-finite value encountered during an attack step."""


class EvaluationError(BapleError):
    """Evaluation requested on an empty or malformed test set."""
