"""Exception types raised by the mixed-type BO library."""
from __future__ import annotations

from typing import Optional


class MixedBOError(Exception):
    """Base class for every error the library raises on purpose."""


class ConfigurationError(MixedBOError, ValueError):
    """Inconsistent hyperparameters, config file, or problem definition."""


class NumericalError(MixedBOError, ArithmeticError):
    """A factorization or moment computation produced unusable numbers."""

    def __init__(self, message: str, index: Optional[int] = None) -> None:
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)
        self.index = index


class BudgetExhausted(MixedBOError):
    """No input tuple is affordable with the remaining budget."""

    def __init__(self, remaining: float) -> None:
        super().__init__(f"No affordable input tuple with remaining budget {remaining:g}")
        self.remaining = remaining


class UnsupportedMetricError(MixedBOError):
    """A metric was requested that the problem cannot provide."""


class OracleError(MixedBOError):
    """An evaluation oracle failed."""
