"""Shared exception types. The CLI maps them onto exit codes."""


class ShapeError(ValueError):
    """Operands with incompatible shapes, named in the message."""


class ValidationError(ValueError):
    """Bad configuration, malformed file, or mismatched artifacts."""


class NumericalError(RuntimeError):
    """NaN input, training divergence, or a failed gradient check."""
