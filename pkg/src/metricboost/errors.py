"""Exception types shared across the package."""


class MetricBoostError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MetricBoostError, ValueError):
    """A precondition on an argument was violated."""


class DegenerateInput(MetricBoostError, ValueError):
    """Input is degenerate for the requested operation (e.g. a zero-norm vector)."""


class UndefinedCorrelation(MetricBoostError, ValueError):
    """Correlation requested for a constant sequence."""


class FormatError(MetricBoostError, ValueError):
    """A file does not conform to its binary or text format."""


class NumericFailure(MetricBoostError, RuntimeError):
    """A numeric step produced non-finite values; state was left untouched."""
