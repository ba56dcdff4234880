"""Exception hierarchy shared by all proscale modules."""


class ProscaleError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ProscaleError, ValueError):
    """Invalid configuration, arguments or shapes supplied by a caller."""


class DimensionError(ValidationError):
    """Tensor extents are incompatible with the requested operation."""


class NumericError(ProscaleError, ArithmeticError):
    """A computation produced NaN or Inf."""


class TensorFormatError(ProscaleError):
    """A tensor file is malformed or truncated."""
