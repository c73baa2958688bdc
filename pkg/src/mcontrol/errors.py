"""Exception and warning types shared across the package."""

from __future__ import annotations


class McontrolError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(McontrolError, ValueError):
    """Array shapes of a model or state do not agree."""


class NonPositiveHorizon(McontrolError, ValueError):
    """The control horizon t1 must be strictly positive."""


class DuplicateEigenvalueWithinBranch(McontrolError, ValueError):
    """Two eigenvalues of the same branch coincide within duplicate_tol."""


class AmbiguousOverlap(McontrolError, ValueError):
    """An eigenvalue lies within overlap_tol of two partners in the other branch."""


class NearResonance(McontrolError, ValueError):
    """A Y/Z eigenvalue gap is below the resonance guard but not a matched pair."""


class ToleranceNotReached(McontrolError, RuntimeError):
    """Adaptive quadrature exhausted its panel budget."""


class EigensolverFailure(McontrolError, RuntimeError):
    """Symmetric eigensolver did not converge or disagreed with its cross-check."""


class SingularGram(McontrolError, ValueError):
    """Gram matrix is numerically singular at the working precision."""


class ZeroCoefficient(McontrolError, ValueError):
    """Some control coefficients b_j vanish where a nonzero value is required."""

    def __init__(self, indices, message=None):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(message or f"zero control coefficients at modes {list(self.indices)}")


class ParseError(McontrolError, ValueError):
    """Problem file could not be decoded; carries line and field context."""

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ValidationError(McontrolError, ValueError):
    """Problem file decoded but violates one or more invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class IllConditionedWarning(UserWarning):
    """Gram condition estimate exceeds the warning threshold."""
