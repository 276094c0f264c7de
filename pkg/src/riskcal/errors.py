"""Exception hierarchy shared across the package."""


class RiskcalError(Exception):
    """Base class for all estimation and validation failures."""


class SchemaError(RiskcalError):
    """Input file is missing required columns or has a malformed layout."""


class ValidationError(RiskcalError):
    """Row- or cell-level data violates an invariant (negative time, bad weight, ...)."""


class ConvergenceError(RiskcalError):
    """An iterative solver exhausted its iteration budget."""


class SeparationError(ConvergenceError):
    """Logistic or partial likelihood is monotone (diverging coefficients)."""


class EstimabilityError(RiskcalError):
    """The design does not support the requested variance computation."""


class CellError(ValidationError):
    """Post-stratum cell structure is incompatible with the registry."""
