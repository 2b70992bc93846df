"""Exception types shared across the package."""


class MortflowError(Exception):
    """Base class for all package errors."""


class DataError(MortflowError):
    """Input data is malformed or unusable (NaN slabs, empty tensors)."""


class CsvFormatError(DataError):
    """A CSV row failed to parse; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class MissingDataError(DataError):
    """A requested bin or slice contains no observations."""


class DegenerateExposureError(DataError):
    """Total exposure in a bin is zero, so no rate can be formed."""


class ShapeMismatchError(DataError):
    """Inputs disagree on a shared grid (ages, years, score dimension)."""


class RankError(MortflowError):
    """Requested Tucker rank exceeds the corresponding mode size."""


class InsufficientDataError(MortflowError):
    """Not enough observations to fit the requested object."""


class EmptyEraError(InsufficientDataError):
    """Every era weight is zero: the window contains no usable years."""


class TailConfigError(MortflowError):
    """Tail extension transition cannot be placed inside the knot range."""


class CalibrationMissingError(MortflowError):
    """Prediction intervals requested but no calibration is available."""


class DomainError(MortflowError):
    """A probability input lies outside [0, 1]."""


class ArtifactError(MortflowError):
    """A model file is unreadable, unrecognized, or inconsistent."""
