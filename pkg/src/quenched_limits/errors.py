"""Error and warning types raised across quenched-limits.

Every error is a ``ValueError`` so callers that only care about "bad input
or failed computation" can keep catching ``ValueError``.
"""
from typing import Optional


class SymbolOutOfRange(ValueError):
    """The driving emitted a symbol with no map in the family."""


class NotExpanding(ValueError):
    """A branch slope violates the uniform expansion bound."""


class GridMismatch(ValueError):
    """Two grid objects live on different numbers of cells."""


class SpectralError(ValueError):
    """Base for failures inside a cocycle pass; carries the fiber context."""

    def __init__(self, message: str, time: Optional[int] = None,
                 theta: Optional[complex] = None, step: Optional[int] = None):
        self.time = time
        self.theta = theta
        self.step = step
        context = []
        if time is not None:
            context.append(f"t={time}")
        if theta is not None:
            context.append(f"theta={theta}")
        if step is not None:
            context.append(f"step={step}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class NormalizerCollapse(SpectralError):
    """A per-step normalizer fell below 1e-12 in modulus."""


class NoConvergence(SpectralError):
    """A pull-back or adjoint pass did not meet its Cauchy tolerance."""


class CenteringError(ValueError):
    """Fiber centering could not be established."""


class DegenerateVariance(ValueError):
    """Sigma^2 is zero (or forced to zero); CLT/LCLT experiments refuse."""


class InvalidDensity(ValueError):
    """A density has negative cells or does not integrate to one."""


class NonConvexCurve(ValueError):
    """A real-axis Lambda curve failed its convexity check."""


class NoLattice(ValueError):
    """The observable has no lattice decomposition with the requested span."""


class SchemaMismatch(ValueError):
    """An artifact does not carry the columns its kind requires."""


class ConfigError(ValueError):
    """Base for configuration errors; ``lineno`` is 1-based when known."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ParseError(ConfigError):
    """Malformed config text or a value that violates a model invariant."""


class UnknownKey(ConfigError):
    """A key that no section declares (strict mode)."""


class MissingRequired(ConfigError):
    """A required key (e.g. ``seed``) is absent."""


class DegenerateVarianceWarning(UserWarning):
    """The variance series is below 1e-6: coboundary suspected."""


class LowStatisticWarning(UserWarning):
    """A Monte-Carlo tail estimate rests on fewer than the required hits."""


class LatticeWarning(UserWarning):
    """Lattice detection returned a degenerate (zero) span."""
