"""Exception types shared across the package."""


class WeakIVError(Exception):
    """Base class for all errors raised by this package."""


class SingularDesignError(WeakIVError):
    """Control matrix is rank deficient; residualization is not defined."""


class NoIdentificationError(WeakIVError):
    """The instrument carries no identifying variation (z'x = 0 or z = 0)."""


class DegenerateSpecificationError(WeakIVError):
    """Summary statistics are degenerate (zero denominator in a closed form)."""


class NotRecoverableError(WeakIVError):
    """The residual correlation cannot be recovered from the reported statistics."""


class TableValidationError(WeakIVError):
    """A critical-value table violates the required shape or monotonicity."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows) if rows is not None else []


class SchemaError(WeakIVError):
    """Tabular input does not match the documented column schema."""
