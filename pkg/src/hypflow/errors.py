"""Exception types shared across the package."""


class HypflowError(Exception):
    """Base class for package errors."""


class DimensionError(HypflowError, ValueError):
    """Operands have incompatible shapes."""


class DomainError(HypflowError, ValueError):
    """An input lies outside the domain of a geometric operation."""


class NumericError(HypflowError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""


class TapeStateError(HypflowError, RuntimeError):
    """Gradients were requested from a tape that has not been run backward."""
