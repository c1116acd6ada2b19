"""
errors.py — exception hierarchy shared by every module.

Usage and domain errors are ValueErrors; convergence and overflow problems are
ArithmeticErrors, so callers can catch either family with builtins.
"""


class DhlError(Exception):
    """Base class for all errors raised by this toolkit."""


class UsageError(DhlError, ValueError):
    """Bad arguments: mismatched generations, non-critical lattice, empty populations."""


class BudgetError(UsageError):
    """An enumeration or memory budget would be exceeded."""

    def __init__(self, message: str, limit: int | None = None):
        super().__init__(message)
        self.limit = limit


class DomainError(DhlError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class ConvergenceError(DhlError, ArithmeticError):
    """An iteration failed to stabilise; carries the last two iterates."""

    def __init__(self, message: str, previous: float | None = None, last: float | None = None):
        super().__init__(message)
        self.previous = previous
        self.last = last


class OverflowGuardError(DhlError, ArithmeticError):
    """A value left double-precision range."""
