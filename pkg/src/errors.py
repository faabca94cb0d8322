"""Exceptions and warning categories.

All exceptions raised deliberately by the package derive from
:py:class:`MamFusionError`, so callers (most notably the command-line
interface) can map them onto exit codes.
"""
from typing import Optional


class MamFusionError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MamFusionError, ValueError):
    """Invalid configuration value or model hyperparameter."""


class DimensionError(MamFusionError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class SequenceLengthError(DimensionError):
    """Sequence is longer than the configured maximum."""


class EmptyVideoError(MamFusionError, ValueError):
    """Video without any frames."""


class ContractViolationError(MamFusionError, ValueError):
    """Precondition of an operation does not hold."""


class NumericError(MamFusionError, FloatingPointError):
    """Non-finite values where finite values are required."""


class DataError(MamFusionError):
    """Base class for problems with files on disk."""


class FeatureFileError(DataError):
    """Malformed feature file.

    Attributes
    ----------
    offset
        Byte offset at which the problem was detected.
    """
    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(DataError):
    """Invalid corpus manifest."""


class CheckpointError(DataError):
    """Checkpoint does not match the model it is loaded into."""


class EmptyGradientWarning(RuntimeWarning):
    """Backward pass reached no trainable parameter."""


class ZeroNormWarning(RuntimeWarning):
    """Cosine similarity requested for a zero-norm vector."""
