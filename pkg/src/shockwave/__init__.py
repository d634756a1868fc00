"""Exponential-data scalar conservation laws via multi-type branching processes."""

__version__ = "0.1.0"

from .dist_core import (
    AuxiliaryDist,
    ExponentialIC,
    MalformedInputError,
    Nonlinearity,
    PreconditionError,
    validate_nonlinearity,
)

__all__ = [
    "AuxiliaryDist",
    "ExponentialIC",
    "MalformedInputError",
    "Nonlinearity",
    "PreconditionError",
    "validate_nonlinearity",
    "__version__",
]
