"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Operands that must share a length do not."""


class ParameterError(ValueError):
    """A scalar argument is outside its documented range."""


class InvariantViolationError(ValueError):
    """A structural invariant (finiteness, box membership, budget) is broken."""
