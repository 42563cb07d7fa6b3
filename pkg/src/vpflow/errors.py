"""Exception types shared across the package."""


class VpflowError(Exception):
    """Base class for all package errors."""


class ParseError(VpflowError):
    """A file row could not be parsed. Carries the 1-based line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class SchemaError(VpflowError):
    """File content violates the expected schema (header, ordering, ranges)."""


class CoverageError(VpflowError):
    """Requested time span is not covered by the available data."""


class DomainError(VpflowError, ValueError):
    """Argument outside its mathematical domain (e.g. latitude > 90)."""


class DimensionError(VpflowError, ValueError):
    """Array shapes are inconsistent with the operation."""


class SizeError(VpflowError, ValueError):
    """Input too short/long for the operation."""


class StateError(VpflowError):
    """Operation called in the wrong state (e.g. backward without caches)."""


class ConfigError(VpflowError):
    """Invalid or inconsistent configuration."""


class DataError(VpflowError):
    """Data present but unusable (e.g. no reliable measurements)."""


class RangeError(VpflowError, ValueError):
    """Timestamp or index outside the series."""


class AlignmentError(VpflowError):
    """Two series/reports that must share an axis do not."""


class DegenerateScaleError(VpflowError):
    """Scaler would divide by zero (constant data)."""


class UndefinedCorrelationError(VpflowError):
    """Pearson correlation undefined (zero variance)."""


class AllMaskedBatch(VpflowError):
    """Signal: every element of a batch is masked out; skip the step.

    Deliberately an exception rather than a NaN return so callers cannot
    silently propagate it into parameter updates.
    """
