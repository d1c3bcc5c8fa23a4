"""Symmetric-function operators, Hessian-type equations and estimate checks."""
from . import symfunc
from .errors import (
    ConeViolation,
    DomainError,
    EllipticityError,
    HessboundError,
    HypothesisError,
    LinearSolveError,
    UnsolvedStateError,
    UnsupportedDimension,
    UnsupportedOperator,
)

__version__ = "0.1.0"

__all__ = [
    "symfunc",
    "ConeViolation",
    "DomainError",
    "EllipticityError",
    "HessboundError",
    "HypothesisError",
    "LinearSolveError",
    "UnsolvedStateError",
    "UnsupportedDimension",
    "UnsupportedOperator",
]
