"""Exception types shared across the package."""


class VbqtlError(Exception):
    """Base class for all package errors."""


class DataError(VbqtlError):
    """Malformed or inconsistent input data."""


class NumericalError(VbqtlError):
    """Numerical failure during inference (divergence, non-finite values)."""
