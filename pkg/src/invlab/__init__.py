"""Frame-based plug-in and PDE-penalized estimators for elliptic coefficient inverse problems."""
from .errors import NumericalError, ValidationError
from .numerics import Grid, GridField

__version__ = "0.1.0"

__all__ = ["Grid", "GridField", "NumericalError", "ValidationError", "__version__"]
