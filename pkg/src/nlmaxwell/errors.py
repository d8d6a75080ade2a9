"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class NLMaxwellError(Exception):
    """Base class for all package errors."""


class InvalidInputError(NLMaxwellError, ValueError):
    """Malformed arguments: wrong shapes, non-finite values, bad parameters."""


class MaterialError(NLMaxwellError, ValueError):
    """Material tensors violate symmetry or positive definiteness."""


class SolverError(NLMaxwellError, RuntimeError):
    """A linear solve missed its residual contract within the iteration cap."""

    def __init__(self, message: str, residual_history: list[float] | None = None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class SpectralError(SolverError):
    """The eigensolver stagnated or returned polluted eigenpairs."""


class NumericError(NLMaxwellError, ArithmeticError):
    """A non-finite intermediate appeared during an energy evaluation."""


class ReductionError(SolverError):
    """Fiber minimization or ray maximization failed."""


class NonConvexModelError(ReductionError):
    """The nonlinearity is not convex, so the fiber minimizer is not unique."""


class NoRayMaximumError(ReductionError):
    """The energy keeps increasing along a ray; no Nehari point exists on it."""


class SymmetryError(NLMaxwellError, ValueError):
    """Input is incompatible with the requested symmetry operation."""


class OracleInapplicableError(NLMaxwellError, ValueError):
    """The radial closed-form solution does not exist for these profiles."""


class ConfigError(NLMaxwellError, ValueError):
    """Configuration file could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
