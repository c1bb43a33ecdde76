"""Exception and warning taxonomy shared across the package."""


class SbpError(Exception):
    """Base class for all package-specific failures."""


class NoConvergence(SbpError):
    """An iteration failed to reach its tolerance.

    Carries the iteration count and the last residual so callers can
    report how far the solve got.
    """

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InvalidExponent(SbpError):
    """Nonlinearity exponent outside the subcritical window (1, 5)."""


class QuadratureUnderflow(SbpError):
    """Truncation radius too small for the requested quadrature accuracy."""


class GridMismatch(SbpError):
    """Fields combined arithmetically do not share the same grid."""


class GridTooSmall(SbpError):
    """Box half-width below the decay-margin requirement."""


class GridTooLarge(SbpError):
    """Grid size exceeds the limit of an O(n^6) direct path."""


class AliasWarning(UserWarning):
    """Significant spectral energy above 0.8x Nyquist; derivatives suspect."""


class PeaksUnresolved(SbpError):
    """Two peak centers closer than the 4h resolution floor."""


class SingularGram(SbpError):
    """Tangent-space Gram matrix numerically singular."""


class AlphaTooSmall(SbpError):
    """Potential growth exponent at or below 3 + sqrt(7); window empty."""


class KrylovBreakdown(SbpError):
    """Krylov inner solve hit a zero denominator before converging."""


class EmptyAdmissible(SbpError):
    """Admissible radius interval is empty at this epsilon."""


class ParseError(SbpError):
    """Config file syntactically malformed."""

    def __init__(self, message, line=None, key=None):
        super().__init__(message)
        self.line = line
        self.key = key


class ValidationError(SbpError):
    """Config value violates a documented constraint."""

    def __init__(self, key, constraint):
        super().__init__(f"{key}: must satisfy {constraint}")
        self.key = key
        self.constraint = constraint
