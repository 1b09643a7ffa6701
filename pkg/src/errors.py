"""
Error Types

Every failure raised by the library derives from DGFFError so the CLI and the
API can map them to exit codes / HTTP statuses in one place.
"""


class DGFFError(Exception):
    """Base class for all library errors."""


class DomainError(DGFFError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class RangeError(DGFFError, ValueError):
    """Index, level or scale outside its admissible range."""


class ProfileError(DGFFError, ValueError):
    """Invalid variance profile (shape, normalization or hull structure)."""


class ConfigError(DGFFError, ValueError):
    """Invalid experiment configuration."""


class SizeLimitError(DGFFError):
    """Grid too large for a dense factorization."""


class SingularSystemError(DGFFError):
    """A Dirichlet system could not be factorized."""


class ConstructionInvalidError(DGFFError):
    """The comparison profile violates one of its guarantees."""

    def __init__(self, guarantee: str, detail: str):
        self.guarantee = guarantee
        super().__init__(f"comparison profile violates '{guarantee}': {detail}")


class KappaTooSmallError(DGFFError):
    """The embedding shift is too small for a coupling to exist."""

    def __init__(self, kappa: int, vertex: tuple[int, int], detail: str):
        self.kappa = kappa
        self.vertex = vertex
        super().__init__(f"kappa={kappa} too small at vertex {vertex}: {detail}")


class NegativeCouplingError(DGFFError):
    """A coupling coefficient a_v is negative."""


class HypothesisError(DGFFError):
    """Size/position hypotheses of a covariance lemma are not met."""

    def __init__(self, failed: list[str]):
        self.failed = failed
        super().__init__("hypotheses violated: " + "; ".join(failed))


class InsufficientDataError(DGFFError):
    """Not enough exceedances / data points to fit a tail."""


class MethodUnsupportedError(DGFFError):
    """Estimation method not available for this profile."""


class ZeroFirstMomentError(DGFFError):
    """The first moment estimate is zero, so no Paley-Zygmund bound exists."""
