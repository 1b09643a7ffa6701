"""
Report Models

Pydantic models for every report the library emits. The CLI serializes them
to JSON/CSV and the API returns them directly as response models.
"""

from typing import Any, Literal

from pydantic import BaseModel, Field

Verdict = Literal["bounded", "growing", "undetermined"]


class ItemReport(BaseModel):
    """Sup deviations of one covariance statement across grid sizes."""
    deviations: dict[int, float]
    pairs: dict[int, int] = Field(default_factory=dict)
    slope: float = 0.0
    threshold: float = 0.0
    verdict: Verdict = "undetermined"


class CovarianceReport(BaseModel):
    """Measured constants of a covariance lemma and their boundedness verdicts."""
    lemma: str
    items: dict[str, ItemReport]
    verdict: Verdict
    details: dict[str, Any] = Field(default_factory=dict)


class SlepianReport(BaseModel):
    """Outcome of the Slepian hypothesis check (equal variances, ordered covariances)."""
    passed: bool
    diagonal_max_gap: float
    violations: list[tuple[int, int, float]] = Field(default_factory=list)
    checked_pairs: int


class CouplingSpec(BaseModel):
    """An explicit comparison coupling between psi and a branching walk."""
    direction: Literal["upper", "lower", "mean-upper", "mean-lower"]
    n: int
    kappa: int = 0
    a: list[float] = Field(default_factory=list)
    embedding: list[tuple[int, int]] = Field(default_factory=list)
    vertices: list[tuple[int, int]] = Field(default_factory=list)
    c1: float | None = None
    k0: int | None = None
    max_a_gap: float | None = None
    slepian: SlepianReport | None = None


class SudakovFerniqueReport(BaseModel):
    """Sudakov-Fernique gap bound and the one-sided increment hypothesis."""
    gamma: float
    bound: float
    one_sided: bool


class TailPoint(BaseModel):
    x: float
    count: int
    phat: float
    ci_lo: float
    ci_hi: float


class RateFit(BaseModel):
    """Weighted least-squares slope of log P-hat against x."""
    rate: float
    ci_lo: float
    ci_hi: float
    points: int
    prefactor: bool = False


class TailReport(BaseModel):
    """Right and left tails of a field maximum around its centring."""
    kind: str
    n: int
    replicates: int
    centring: float
    centring_kind: Literal["m_N", "M_N*", "empirical"]
    right_tail: list[TailPoint]
    right_fit: RateFit | None = None
    predicted_rate: float
    rate_in_ci: bool | None = None
    left_tail: list[TailPoint] = Field(default_factory=list)
    left_fit: RateFit | None = None
    summary: dict[str, float] = Field(default_factory=dict)
    notes: list[str] = Field(default_factory=list)


class InequalityPoint(BaseModel):
    level: float
    lhs: float
    rhs: float
    lhs_ci: tuple[float, float]
    rhs_ci: tuple[float, float]
    holds: bool


class InequalityReport(BaseModel):
    """Empirical check of P(lhs) <= factor * P(rhs) on a grid."""
    relation: str
    factor: float
    points: list[InequalityPoint]
    holds: bool


class MomentEstimate(BaseModel):
    """Estimate of a moment of h_N(y)."""
    value: float = Field(ge=0)
    standard_error: float = Field(ge=0)
    method: Literal["monte-carlo", "semi-analytic", "brute-force"]
    details: dict[str, Any] = Field(default_factory=dict)


class PaleyZygmund(BaseModel):
    """Second-moment lower bound next to the direct tail it bounds."""
    y: float
    first_moment: MomentEstimate
    second_moment: MomentEstimate
    bound: float
    bound_se: float
    direct_tail: float
    direct_ci: tuple[float, float]
    c_tilde: float
    holds: bool


class DekkingHostReport(BaseModel):
    """E|M - M'| for independent copies against 2 E[M_{4N} - M_N]."""
    n: int
    lhs: float = Field(ge=0)
    lhs_se: float
    rhs: float
    rhs_se: float
    analytic_rhs: float | None = None
    holds: bool
