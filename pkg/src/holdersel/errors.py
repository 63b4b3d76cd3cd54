"""Exception hierarchy.

Two families matter for callers: :class:`DomainError` (bad inputs or a
model outside its admissible regime, CLI status 2) and
:class:`NumericError` (a computation that failed at run time, CLI
status 3).
"""

from __future__ import annotations

import numpy as np


class HolderselError(Exception):
    """Base class for all package errors."""


class DomainError(HolderselError, ValueError):
    """Input outside the admissible domain of an operation."""


class ConfigError(DomainError):
    """Configuration document is malformed or incomplete."""


class NumericError(HolderselError, ArithmeticError):
    """A numerical computation failed."""


class EvaluationError(NumericError):
    """A coefficient evaluated to a non-finite value.

    Attributes
    ----------
    x, y : ndarray
        The offending evaluation point.
    """

    def __init__(self, message, x=None, y=None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x)
        self.y = None if y is None else np.asarray(y)


class IntegrationError(NumericError):
    """Time stepping produced a non-finite state.

    Attributes
    ----------
    t : float
        Time of the last finite state.
    state : dict
        Last finite slow and fast state, plus the seed of the failing path.
    """

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state or {}


class QuadratureError(NumericError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class SamplingError(NumericError):
    """Monte Carlo sampler failed its convergence diagnostic."""


class StabilityError(NumericError):
    """Forced integral equation left the region where it is well posed."""


class ResourceError(NumericError):
    """Requested simulation exceeds the configured work budget."""


def exit_status(exc: BaseException) -> int:
    """Map an exception to the CLI exit status (2 domain, 3 numeric)."""
    if isinstance(exc, DomainError):
        return 2
    if isinstance(exc, NumericError):
        return 3
    return 1
