"""Exception types shared across the package."""


class CobaltError(Exception):
    """Base class for all package errors."""


class ValidationError(CobaltError, ValueError):
    """Input violates a documented precondition or invariant."""


class ParseError(CobaltError, ValueError):
    """A file could not be parsed; the message names the location."""


class SolveError(CobaltError, RuntimeError):
    """Finite-element system could not be solved (e.g. a mechanism)."""


class FitError(CobaltError, RuntimeError):
    """Surrogate fitting failed after all retries."""
