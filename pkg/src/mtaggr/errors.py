"""Exception types shared across the library."""


class ValidationError(ValueError):
    """Malformed inputs: bad shapes, non-finite values, unusable files."""


class NumericalError(ArithmeticError):
    """A quantity is mathematically undefined for the given data."""


class ZeroVarianceError(NumericalError):
    """An operation needed a nonzero variance (or range) and got zero."""
