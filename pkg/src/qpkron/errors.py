"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class DomainError(ValidationError):
    """Evaluation point lies outside the unit cube."""


class UnsupportedDimensionError(ValidationError):
    """Requested spatial dimension is not implemented."""


class DivergenceError(RuntimeError):
    """The fixed-point iteration stopped contracting."""

    def __init__(self, message: str, ratio: float):
        super().__init__(message)
        self.ratio = ratio


class NumericalBreakdownError(ArithmeticError):
    """A quantity that is nonnegative in exact arithmetic came out negative,
    or a Krylov recurrence lost positivity."""
