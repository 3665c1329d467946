"""Desk-scale video paragraph captioning, end to end on a float64 autodiff core."""

from .errors import NumericalError, ShapeError, ValidationError

__version__ = "0.1.0"

__all__ = ["NumericalError", "ShapeError", "ValidationError", "__version__"]
