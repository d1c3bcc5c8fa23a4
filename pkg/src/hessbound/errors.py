"""Exception hierarchy shared by all modules."""


class HessboundError(Exception):
    """Base class for all package errors."""


class DomainError(HessboundError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConeViolation(DomainError):
    """Eigenvalues fall outside the admissible cone.

    Attributes
    ----------
    index : int or tuple or None
        Sample index (symfunc) or grid node (equations/solver) that failed.
    order : int or None
        The first elementary symmetric function sigma_i that is not positive.
    value : float or None
        The offending sigma_i value.
    eigenvalues : ndarray or None
        Eigenvalues at the failing point.
    """

    def __init__(self, message, index=None, order=None, value=None, eigenvalues=None):
        super().__init__(message)
        self.index = index
        self.order = order
        self.value = value
        self.eigenvalues = eigenvalues


class UnsupportedOperator(HessboundError):
    """The operator lacks a property the caller requires."""


class UnsupportedDimension(HessboundError):
    """The manifold dimension is not supported by the requested quantity."""


class EllipticityError(HessboundError):
    """The linearized principal part failed its positive-definiteness certificate."""


class LinearSolveError(HessboundError):
    """The Newton linear system could not be solved."""


class HypothesisError(HessboundError):
    """A hypothesis required by an estimate report does not hold."""


class UnsolvedStateError(HessboundError):
    """A field handed to an estimate report does not solve its equation."""
