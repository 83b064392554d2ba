"""Exception types shared across the package."""


class SCBFError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SCBFError, ValueError):
    """Invalid parameters, shapes or exponents."""


class AdmissibilityError(SCBFError, ValueError):
    """Parameters are well formed but violate a condition a result depends on.

    The message names the violated condition, e.g. ``2*beta*mu >= 1``.
    """

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class BlowUpError(SCBFError, RuntimeError):
    """A trajectory produced non-finite values or exceeded the growth guard."""

    def __init__(self, message, time=None, norms=None):
        super().__init__(message)
        self.time = time
        self.norms = norms or {}


class ConvergenceError(SCBFError, RuntimeError):
    """An iterative solve hit its iteration cap."""
