"""
Graybox NLP - Errors
Exception hierarchy shared by the numerical kernel, the model layer and the I/O helpers.
"""

from typing import Optional


class GrayboxError(Exception):
    """Base class for every error raised by the package."""


class StructuralError(GrayboxError):
    """Shapes, patterns or indices do not fit together."""


class DimensionMismatchError(StructuralError):
    """A vector or matrix has the wrong length for the object it is used with."""


class NumericError(GrayboxError):
    """NaN or Inf showed up where finite values are required."""

    def __init__(self, message: str, block_id: Optional[str] = None):
        self.block_id = block_id
        if block_id is not None:
            message = f"{message} (block '{block_id}')"
        super().__init__(message)


class SingularityError(GrayboxError):
    """A solve was requested on a factorization with zero pivots."""


class ContractViolationError(GrayboxError):
    """An oracle returned values that do not match its declared sparsity pattern."""

    def __init__(self, message: str, block_id: Optional[str] = None):
        self.block_id = block_id
        if block_id is not None:
            message = f"{message} (block '{block_id}')"
        super().__init__(message)


class LinAlgFailureError(GrayboxError):
    """Inertia correction gave up before reaching the required inertia."""


class WeightFileError(GrayboxError):
    """Base class for weight-file decoding problems."""


class MalformedHeaderError(WeightFileError):
    """Magic, version or a layer header could not be decoded."""


class DimensionInconsistencyError(WeightFileError):
    """Decoded layer shapes contradict each other."""


class TruncatedPayloadError(WeightFileError):
    """The file ended before the declared payload was read."""


class InputFileError(GrayboxError):
    """A reference-input file could not be parsed."""


class PixelRangeError(InputFileError):
    """A pixel value lies outside [0, 1]."""


class InfeasibleSpecError(GrayboxError):
    """A problem definition is infeasible before any solve starts."""


class ConfigError(GrayboxError):
    """A configuration or case file failed validation."""
