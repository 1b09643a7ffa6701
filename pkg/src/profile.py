"""
Variance Profiles

Step variance profiles sigma(.), their integrated variance I, the concave hull
giving the effective variance, and every deterministic centring quantity built
from it (m_N, M_N^*(t), the optimal path, the concave barrier and the
comparison profile used by the upper coupling).
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from src.errors import ConstructionInvalidError, DomainError, ProfileError, RangeError

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
SQRT_LOG2 = math.sqrt(LOG2)

# Slope tolerance for detecting hull pieces on which I equals its hull
SLOPE_TOL = 1e-12

# Tolerance on I(1) = 1
NORM_TOL = 1e-9

# Named profiles: (sigmas, lambdas)
PRESETS: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = {
    "flat": ((1.0,), (1.0,)),
    "convex2": ((math.sqrt(0.5), math.sqrt(1.5)), (0.5, 1.0)),
    "decreasing2": ((math.sqrt(1.5), math.sqrt(0.5)), (0.5, 1.0)),
    "three-scale": (
        tuple(math.sqrt(s) for s in (1.0, 2.5, 0.6, 1.4, 0.2, 0.3, 0.65)),
        (0.1, 0.3, 0.4, 0.5, 0.7, 0.8, 1.0),
    ),
}


@dataclass(frozen=True)
class StepProfile:
    """Right-continuous step function sigma = sigma_i on [lambda_{i-1}, lambda_i)."""

    sigmas: tuple[float, ...]
    lambdas: tuple[float, ...]

    def __post_init__(self):
        if len(self.sigmas) != len(self.lambdas) or not self.sigmas:
            raise ProfileError("sigmas and lambdas must be non-empty and of equal length")
        if any(not math.isfinite(s) or s < 0 for s in self.sigmas):
            raise ProfileError("sigmas must be finite and non-negative")
        if not any(s > 0 for s in self.sigmas):
            raise ProfileError("at least one sigma must be positive")
        previous = 0.0
        for lam in self.lambdas:
            if not lam > previous:
                raise ProfileError("lambdas must be strictly increasing and positive")
            previous = lam
        if abs(self.lambdas[-1] - 1.0) > 1e-12:
            raise ProfileError("the last lambda must equal 1")
        total = self.total_variance()
        if abs(total - 1.0) > NORM_TOL:
            raise ProfileError(f"profile is not normalized: I(1) = {total:.12g}")

    @classmethod
    def create(cls, sigmas, lambdas, strict: bool = False) -> StepProfile:
        """
        Build a profile, rescaling sigma so that I(1) = 1.

        Args:
            sigmas: sigma_1..sigma_M
            lambdas: lambda_1 < ... < lambda_M = 1
            strict: Reject unnormalized input instead of rescaling

        Returns:
            Normalized StepProfile

        Raises:
            ProfileError: On malformed or (strict) unnormalized input
        """
        sigmas = tuple(float(s) for s in sigmas)
        lambdas = tuple(float(lam) for lam in lambdas)
        if len(sigmas) != len(lambdas) or not sigmas:
            raise ProfileError("sigmas and lambdas must be non-empty and of equal length")
        total = _integral(sigmas, lambdas, 1.0)
        if total <= 0:
            raise ProfileError("at least one sigma must be positive")
        if abs(total - 1.0) > NORM_TOL:
            if strict:
                raise ProfileError(f"profile is not normalized: I(1) = {total:.12g}")
            logger.debug("rescaling profile by 1/sqrt(%.6g)", total)
            scale = math.sqrt(total)
            sigmas = tuple(s / scale for s in sigmas)
        return cls(sigmas, lambdas)

    @classmethod
    def preset(cls, name: str) -> StepProfile:
        if name not in PRESETS:
            raise ProfileError(f"unknown profile preset '{name}' (known: {sorted(PRESETS)})")
        sigmas, lambdas = PRESETS[name]
        return cls.create(sigmas, lambdas)

    @property
    def M(self) -> int:
        return len(self.sigmas)

    def total_variance(self) -> float:
        return _integral(self.sigmas, self.lambdas, 1.0)

    def sigma_at(self, s: float) -> float:
        """sigma(s), right-continuous; sigma(1) = sigma_M."""
        if not 0.0 <= s <= 1.0:
            raise RangeError(f"scale {s} outside [0, 1]")
        i = bisect.bisect_right(self.lambdas, s)
        return self.sigmas[min(i, self.M - 1)]

    def integrated(self, a: float, b: float | None = None) -> float:
        """I(a) or, with two arguments, I(a, b) = I(b) - I(a)."""
        if b is None:
            a, b = 0.0, a
        return integrated_variance(self, a, b)

    def breakpoints(self) -> list[tuple[float, float]]:
        """Graph vertices (lambda_i, I(lambda_i)) for i = 0..M."""
        points = [(0.0, 0.0)]
        acc = 0.0
        previous = 0.0
        for sigma, lam in zip(self.sigmas, self.lambdas):
            acc += sigma * sigma * (lam - previous)
            points.append((lam, acc))
            previous = lam
        return points

    def to_dict(self) -> dict[str, list[float]]:
        return {"sigmas": list(self.sigmas), "lambdas": list(self.lambdas)}


def _integral(sigmas, lambdas, b: float) -> float:
    acc, previous = 0.0, 0.0
    for sigma, lam in zip(sigmas, lambdas):
        if b <= previous:
            break
        acc += sigma * sigma * (min(lam, b) - previous)
        previous = lam
    return acc


def integrated_variance(p: StepProfile, a: float, b: float) -> float:
    """
    Exact integral of sigma^2 over [a, b].

    Time Complexity: O(M)

    Raises:
        RangeError: If a > b or either end lies outside [0, 1]
    """
    if not 0.0 <= a <= b <= 1.0:
        raise RangeError(f"need 0 <= a <= b <= 1, got a={a}, b={b}")
    return _integral(p.sigmas, p.lambdas, b) - _integral(p.sigmas, p.lambdas, a)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def upper_hull(points: list[tuple[float, float]], tol: float = 1e-14) -> list[int]:
    """
    Indices of the upper (concave) hull of points sorted by x.

    Monotone chain; collinear points are dropped so consecutive hull slopes
    strictly decrease.
    """
    hull: list[int] = []
    for i, point in enumerate(points):
        while len(hull) >= 2 and _cross(points[hull[-2]], points[hull[-1]], point) >= -tol:
            hull.pop()
        hull.append(i)
    return hull


def lower_hull(points: list[tuple[float, float]], tol: float = 1e-14) -> list[int]:
    """Indices of the lower (convex) hull of points sorted by x."""
    hull: list[int] = []
    for i, point in enumerate(points):
        while len(hull) >= 2 and _cross(points[hull[-2]], points[hull[-1]], point) <= tol:
            hull.pop()
        hull.append(i)
    return hull


@dataclass(frozen=True)
class EffectiveProfile:
    """Effective variance: slopes of the concave hull of I and its data."""

    bar_sigmas: tuple[float, ...]
    bar_lambdas: tuple[float, ...]  # includes lambda^0 = 0
    weights: tuple[int, ...]
    pis: tuple[int, ...]  # lambda^j = lambdas[pis[j] - 1], pis[0] = 0

    @property
    def m(self) -> int:
        return len(self.bar_sigmas)

    def delta_lambda(self, j: int) -> float:
        """lambda^j - lambda^{j-1} for j = 1..m."""
        return self.bar_lambdas[j] - self.bar_lambdas[j - 1]

    def t(self, j: int, n: int) -> float:
        """t^j = lambda^j * n."""
        return self.bar_lambdas[j] * n

    def first_order(self) -> float:
        """I_{sigma-bar}(1) = sum_j sigma-bar_j * delta lambda^j."""
        return sum(s * self.delta_lambda(j + 1) for j, s in enumerate(self.bar_sigmas))

    def as_step_profile(self) -> StepProfile:
        return StepProfile.create(self.bar_sigmas, self.bar_lambdas[1:])

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "bar_sigmas": list(self.bar_sigmas),
            "bar_lambdas": list(self.bar_lambdas),
            "weights": list(self.weights),
            "pis": list(self.pis),
        }


def effective_profile(p: StepProfile) -> EffectiveProfile:
    """
    Concave hull of I and the effective variance sigma-bar.

    Pieces on which I coincides with its hull get weight 3, pieces where I lies
    strictly below get weight 1.

    Raises:
        ProfileError: If I touches its hull on only part of a piece
    """
    points = p.breakpoints()
    hull = upper_hull(points)
    bar_sigmas, bar_lambdas, weights, pis = [], [0.0], [], [0]
    for a, b in zip(hull, hull[1:]):
        (xa, ya), (xb, yb) = points[a], points[b]
        slope = (yb - ya) / (xb - xa)
        tol = SLOPE_TOL * max(1.0, slope)
        equal = [abs(p.sigmas[i] ** 2 - slope) <= tol for i in range(a, b)]
        touching = any(
            abs(points[i][1] - (ya + slope * (points[i][0] - xa))) <= tol
            for i in range(a + 1, b)
        )
        if all(equal):
            weights.append(3)
        elif not any(equal) and not touching:
            weights.append(1)
        else:
            raise ProfileError(
                f"integrated variance meets its hull on part of [{xa}, {xb}] only"
            )
        bar_sigmas.append(math.sqrt(slope))
        bar_lambdas.append(xb)
        pis.append(b)
    return EffectiveProfile(tuple(bar_sigmas), tuple(bar_lambdas), tuple(weights), tuple(pis))


def expected_max(p: StepProfile, n: int) -> float:
    """
    Centring m_N of the maximum of psi on V_N, N = 2^n.

    m_N = sum_j [2 log2 sigma-bar_j dt^j - w_j sigma-bar_j log(dt^j) / 4]
    with dt^j = (lambda^j - lambda^{j-1}) n.

    Raises:
        RangeError: If any dt^j <= 1
    """
    eff = effective_profile(p)
    total = 0.0
    for j in range(1, eff.m + 1):
        dt = eff.delta_lambda(j) * n
        if dt <= 1:
            raise RangeError(f"n={n} too small: scale piece {j} spans {dt:.3g} <= 1 levels")
        sigma = eff.bar_sigmas[j - 1]
        total += 2 * LOG2 * sigma * dt - eff.weights[j - 1] * sigma * math.log(dt) / 4
    return total


def _centring_terms(eff: EffectiveProfile, n: int) -> list[float]:
    terms = []
    for j in range(1, eff.m + 1):
        dt = eff.delta_lambda(j) * n
        if dt <= 1:
            raise RangeError(f"n={n} too small: scale piece {j} spans {dt:.3g} <= 1 levels")
        sigma = eff.bar_sigmas[j - 1]
        terms.append(2 * SQRT_LOG2 * sigma * dt
                     - eff.weights[j - 1] * sigma * math.log(dt) / (4 * SQRT_LOG2))
    return terms


def mibrw_centring(p: StepProfile, n: int, t: float) -> float:
    """
    M_N^*(t): the S-scale centring interpolated up to time t.

    M_N^*(n) = m_N / sqrt(log 2).
    """
    if not 0.0 <= t <= n:
        raise RangeError(f"t={t} outside [0, {n}]")
    eff = effective_profile(p)
    total = 0.0
    for j, term in enumerate(_centring_terms(eff, n), start=1):
        start, end = eff.t(j - 1, n), eff.t(j, n)
        weight = min(max(t - start, 0.0), end - start) / (end - start)
        total += weight * term
    return total


def centring_increment(p: StepProfile, n: int, i: int) -> float:
    """Delta M_N^*(t^i) = M_N^*(t^i) - M_N^*(t^{i-1})."""
    eff = effective_profile(p)
    if not 1 <= i <= eff.m:
        raise RangeError(f"piece {i} outside [1, {eff.m}]")
    return _centring_terms(eff, n)[i - 1]


def _piece_of(eff: EffectiveProfile, s: float) -> int:
    # j with lambda^{j-1} < s <= lambda^j
    return max(1, bisect.bisect_left(eff.bar_lambdas, s))


def optimal_path(p: StepProfile, n: int, k: int, x: float) -> float:
    """
    s_{k,n}(x): conditional mean path of an increment ending at x.

    On the piece (t^{i-1}, t^i] the path interpolates the piece increment by
    I(lambda^{i-1}, k/n) / I(lambda^{i-1}, lambda^i); on the first piece this is
    I(k/n) / I(lambda^1).
    """
    if not 0 <= k <= n:
        raise RangeError(f"k={k} outside [0, {n}]")
    if k == 0:
        return 0.0
    eff = effective_profile(p)
    s = k / n
    i = _piece_of(eff, s)
    lo, hi = eff.bar_lambdas[i - 1], eff.bar_lambdas[i]
    return p.integrated(lo, s) / p.integrated(lo, hi) * x


def barrier(p: StepProfile, n: int, k: int, cf: float) -> float:
    """
    Concave barrier f_{k,n}: half-width of the tube around the optimal path.

    Args:
        p: Profile
        n: Grid exponent
        k: Level in [0, n]
        cf: Barrier constant C_f > 0

    Returns:
        C_f * (n * I(...))^{2/3} with the interval selected by the position of
        k relative to t_1, t^1, t_{pi_i + 1}, t^{i+1}
    """
    if not cf > 0:
        raise DomainError("C_f must be positive")
    if not 0 <= k <= n:
        raise RangeError(f"k={k} outside [0, {n}]")
    eff = effective_profile(p)
    s = k / n
    first = p.lambdas[0]
    if s <= first:
        mass = p.integrated(0.0, s)
    elif s <= eff.bar_lambdas[1]:
        mass = p.integrated(s, eff.bar_lambdas[1])
    else:
        i = _piece_of(eff, s) - 1
        start, end = eff.bar_lambdas[i], eff.bar_lambdas[i + 1]
        split = p.lambdas[eff.pis[i]] if eff.pis[i] < p.M else end
        mass = p.integrated(start, s) if s <= split else p.integrated(s, end)
    return cf * (mass * n) ** (2.0 / 3.0)


@dataclass(frozen=True)
class ComparisonProfile:
    """The comparison variance sigma-tilde used by the IBRW upper coupling."""

    profile: StepProfile
    n: int
    kappa: int
    case: Literal["envelope", "three-level"]
    breakpoints: tuple[float, ...]

    def sigma_at(self, s: float) -> float:
        return self.profile.sigma_at(s)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "kappa": self.kappa,
            "case": self.case,
            "breakpoints": list(self.breakpoints),
            "profile": self.profile.to_dict(),
        }


def _validate_comparison(p: StepProfile, tilde: StepProfile, n: int, kappa: int) -> None:
    if abs(tilde.total_variance() - 1.0) > NORM_TOL:
        raise ConstructionInvalidError("normalization", f"I(1) = {tilde.total_variance():.12g}")
    first, first_tilde = effective_profile(p).bar_sigmas[0], effective_profile(tilde).bar_sigmas[0]
    if abs(first - first_tilde) > 1e-9:
        raise ConstructionInvalidError(
            "first effective variance", f"{first_tilde:.12g} != {first:.12g}")
    for x in np.unique(np.concatenate([np.linspace(0, n, 20 * n + 1), np.arange(n + 1)])):
        lhs = (n + kappa) * tilde.integrated((n - x) / (n + kappa))
        rhs = n * p.integrated((n - x) / n)
        if lhs > rhs + 1e-9:
            raise ConstructionInvalidError(
                "domination", f"at x={x:.4g}: {lhs:.12g} > {rhs:.12g}")


def build_comparison_profile(p: StepProfile, n: int, kappa: int) -> ComparisonProfile:
    """
    Construct sigma-tilde for the embedding shift kappa.

    One effective scale: the lower convex envelope of I. Otherwise a profile
    alternating sigma_min / sigma_max (or starting with sigma-bar_1 when
    sigma_1 = sigma-bar_1) whose first hull piece has slope sigma-bar_1^2 and
    ends at lambda^1 * n / (n + kappa).

    Raises:
        ConstructionInvalidError: If a guarantee fails on the check grid
    """
    if kappa < 1:
        raise RangeError("kappa must be a positive integer")
    eff = effective_profile(p)
    if eff.m == 1:
        points = p.breakpoints()
        idx = lower_hull(points)
        sigmas, lambdas = [], []
        for a, b in zip(idx, idx[1:]):
            (xa, ya), (xb, yb) = points[a], points[b]
            sigmas.append(math.sqrt(max(0.0, (yb - ya) / (xb - xa))))
            lambdas.append(xb)
        tilde = StepProfile.create(sigmas, lambdas)
        result = ComparisonProfile(tilde, n, kappa, "envelope", tuple(lambdas))
    else:
        lo2, hi2 = min(p.sigmas) ** 2, max(p.sigmas) ** 2
        bar2 = eff.bar_sigmas[0] ** 2
        lam_first = eff.bar_lambdas[1] * n / (n + kappa)
        lam3 = (lam_first * (bar2 - lo2) + hi2 - 1.0) / (hi2 - lo2)
        if abs(p.sigmas[0] - eff.bar_sigmas[0]) <= 1e-12:
            lam1 = 0.0
            segments = [(lam_first, bar2), (lam3, lo2), (1.0, hi2)]
        else:
            lam1 = lam_first * (hi2 - bar2) / (hi2 - lo2)
            segments = [(lam1, lo2), (lam_first, hi2), (lam3, lo2), (1.0, hi2)]
        if not -1e-12 <= lam1 <= lam_first + 1e-12 <= lam3 + 2e-12 <= 1.0 + 3e-12:
            raise ConstructionInvalidError(
                "ordering", f"breakpoints {lam1:.6g}, {lam_first:.6g}, {lam3:.6g} not ordered")
        kept, previous = [], 0.0
        for end, var in segments:
            end = min(max(end, 0.0), 1.0)
            if end - previous > 1e-12:
                kept.append((end, var))
                previous = end
        tilde = StepProfile.create([math.sqrt(v) for _, v in kept], [e for e, _ in kept])
        result = ComparisonProfile(tilde, n, kappa, "three-level", (lam1, lam_first, lam3))
    _validate_comparison(p, result.profile, n, kappa)
    logger.debug("comparison profile for n=%d kappa=%d: %s", n, kappa, result.case)
    return result
