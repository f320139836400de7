"""Exception types shared across the package."""


class KpcaError(Exception):
    """Base class for all package errors."""


class DataError(KpcaError):
    """Malformed or degenerate input data (parse errors, ragged rows, ...)."""


class SingularMatrixError(KpcaError):
    """An eigenvalue of H'GH fell below the positivity floor required by the
    trace-sqrt gradient. Raised loudly instead of silently regularizing."""


class ToleranceUnreachableError(KpcaError):
    """An adaptive procedure exhausted its budget before reaching the target."""


class UnprojectableModelError(KpcaError):
    """The fitted dual variable has a (near-)singular H'GH, so out-of-sample
    projection is not defined."""
