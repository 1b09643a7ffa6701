"""
Gaussian Comparison

Slepian and Sudakov-Fernique hypothesis checks, the Borell tail bound, and the
explicit couplings between psi and the branching walks: psi + aX against the
IBRW on a 2^kappa-refined grid (upper), the MIBRW plus aX against psi on an
embedded sub-lattice (lower), and the two mean chains.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from src.covariance import cov_ibrw, cov_mibrw, cov_psi, cov_psi_rows
from src.errors import (ConstructionInvalidError, DomainError, KappaTooSmallError,
                        RangeError)
from src.lattice import GridSize
from src.profile import LOG2, StepProfile, build_comparison_profile
from src.samplers import ibrw_variance
from src.schemas import (CouplingSpec, InequalityPoint, InequalityReport, SlepianReport,
                         SudakovFerniqueReport)
from src.utils import wilson_interval

logger = logging.getLogger(__name__)

# Numerical slack for exact covariance comparisons
COV_TOL = 1e-9

# Largest shift tried by the automatic kappa search
KAPPA_MAX = 16

# Violating pairs listed in a report
MAX_LISTED = 100


def check_slepian_hypotheses(cov_x: np.ndarray, cov_y: np.ndarray, tol: float = COV_TOL) -> SlepianReport:
    """
    Equal variances and E[X_i X_j] >= E[Y_i Y_j] for all i != j.

    Under these, P(max X > x) <= P(max Y > x) for every x.

    Args:
        cov_x: Covariance of the more correlated field
        cov_y: Covariance of the less correlated field
        tol: Numerical slack

    Returns:
        SlepianReport listing violating pairs (i, j, deficit)
    """
    cov_x, cov_y = np.asarray(cov_x, float), np.asarray(cov_y, float)
    if cov_x.shape != cov_y.shape or cov_x.ndim != 2:
        raise DomainError("covariance matrices must be square and of equal shape")
    diag_gap = float(np.max(np.abs(np.diag(cov_x) - np.diag(cov_y)))) if cov_x.size else 0.0
    i, j = np.triu_indices(cov_x.shape[0], k=1)
    deficit = cov_y[i, j] - cov_x[i, j]
    bad = np.nonzero(deficit > tol)[0]
    order = bad[np.argsort(-deficit[bad])][:MAX_LISTED]
    violations = [(int(i[k]), int(j[k]), float(deficit[k])) for k in order]
    return SlepianReport(passed=diag_gap <= tol and bad.size == 0, diagonal_max_gap=diag_gap,
                         violations=violations, checked_pairs=int(i.size))


def sudakov_fernique_gap(cov_x: np.ndarray, cov_y: np.ndarray, tol: float = COV_TOL) -> SudakovFerniqueReport:
    """
    gamma = max |E(X_i - X_j)^2 - E(Y_i - Y_j)^2| and the bound sqrt(gamma log |I|).

    one_sided is True when every increment of X is at most the matching
    increment of Y, in which case E[max X] <= E[max Y].
    """
    cov_x, cov_y = np.asarray(cov_x, float), np.asarray(cov_y, float)
    dx, dy = np.diag(cov_x), np.diag(cov_y)
    gx = dx[:, None] + dx[None, :] - 2 * cov_x
    gy = dy[:, None] + dy[None, :] - 2 * cov_y
    gamma = float(np.max(np.abs(gx - gy))) if gx.size else 0.0
    size = cov_x.shape[0]
    bound = math.sqrt(gamma * math.log(size)) if size > 1 else 0.0
    return SudakovFerniqueReport(gamma=gamma, bound=bound, one_sided=bool(np.all(gx <= gy + tol)))


def borell_tail(varmax: float, x: float) -> float:
    """
    Borell-TIS type bound 2 exp(-x^2 / (2 varmax)) on P(|max - E max| > x).

    Raises:
        DomainError: If varmax <= 0 or x < 0
    """
    if not varmax > 0:
        raise DomainError("varmax must be positive")
    if x < 0:
        raise DomainError("x must be non-negative")
    return 2.0 * math.exp(-x * x / (2.0 * varmax))


def comparison_tilde(p: StepProfile, n: int, kappa: int) -> StepProfile:
    """sigma-tilde for the shift kappa; kappa = 0 compares against sigma itself."""
    return p if kappa == 0 else build_comparison_profile(p, n, kappa).profile


def _upper_at(p: StepProfile, n: int, kappa: int, cov: np.ndarray) -> CouplingSpec:
    grid = GridSize(n)
    tilde = comparison_tilde(p, n, kappa)
    var_r = ibrw_variance(tilde, n, kappa)
    a2 = var_r - np.diag(cov)
    worst = int(np.argmin(a2))
    if a2[worst] < -COV_TOL:
        raise KappaTooSmallError(kappa, grid.vertex(worst).as_tuple(),
                                 f"Var psi = {cov[worst, worst]:.6g} exceeds Var R = {var_r:.6g}")
    a = np.sqrt(np.maximum(a2, 0.0))
    vertices = grid.vertices()
    cov_r = cov_ibrw(tilde, grid, kappa).matrix(vertices)
    report = check_slepian_hypotheses(cov + np.outer(a, a), cov_r)
    scale = 1 << kappa
    return CouplingSpec(direction="upper", n=n, kappa=kappa, a=a.tolist(),
                        embedding=[(scale * v.x, scale * v.y) for v in vertices],
                        vertices=[v.as_tuple() for v in vertices], slepian=report)


def build_upper_coupling(p: StepProfile, n: int, kappa: int | str = "auto") -> CouplingSpec:
    """
    psi + a X against R^{2^kappa N} at v -> 2^kappa v.

    a_v^2 = Var[R_{2^kappa v}] - Var[psi_v], where R carries the sqrt(log 2)
    factor. With kappa="auto" the smallest kappa passing every check is used.

    Raises:
        KappaTooSmallError: If some a_v^2 < 0 (or no kappa up to KAPPA_MAX works)
    """
    cov = cov_psi(p, GridSize(n))
    if kappa != "auto":
        return _upper_at(p, n, int(kappa), cov)
    last: Exception | None = None
    for candidate in range(KAPPA_MAX + 1):
        try:
            spec = _upper_at(p, n, candidate, cov)
        except (KappaTooSmallError, ConstructionInvalidError) as exc:
            last = exc
            continue
        if spec.slepian.passed:
            logger.info("upper coupling: kappa=%d", candidate)
            return spec
    raise KappaTooSmallError(KAPPA_MAX, (0, 0), f"no kappa <= {KAPPA_MAX} works ({last})")


def lower_embedding(n: int, kappa: int) -> tuple[GridSize, list[tuple[int, int]], list[tuple[int, int]]]:
    """Small grid V_{2^-kappa N} and its image (N/4, N/4) + 2^{kappa-3} v in V_N."""
    if not 3 <= kappa <= n - 1:
        raise RangeError(f"lower coupling needs 3 <= kappa <= n - 1, got kappa={kappa}, n={n}")
    small = GridSize(n - kappa)
    N, step = 1 << n, 1 << (kappa - 3)
    local = [v.as_tuple() for v in small.vertices()]
    image = [(N // 4 + step * x, N // 4 + step * y) for x, y in local]
    return small, local, image


def _lower_at(p: StepProfile, n: int, kappa: int) -> CouplingSpec:
    grid = GridSize(n)
    small, local, image = lower_embedding(n, kappa)
    indices = np.array([x * grid.N + y for x, y in image])
    cov_y = cov_psi_rows(p, grid, indices)
    cov_s = cov_mibrw(p, small).matrix(local)
    a2 = np.diag(cov_y) / LOG2 - np.diag(cov_s)
    worst = int(np.argmin(a2))
    if a2[worst] < -COV_TOL:
        raise KappaTooSmallError(kappa, image[worst],
                                 f"Var psi / log 2 = {cov_y[worst, worst] / LOG2:.6g} below Var S")
    a = np.sqrt(np.maximum(a2, 0.0))
    report = check_slepian_hypotheses(LOG2 * (cov_s + np.outer(a, a)), cov_y)
    gap = float(np.max(np.abs(a[:, None] - a[None, :])))
    return CouplingSpec(direction="lower", n=n, kappa=kappa, a=a.tolist(), embedding=image,
                        vertices=local, max_a_gap=gap, slepian=report)


def build_lower_coupling(p: StepProfile, n: int, kappa: int | str = "auto") -> CouplingSpec:
    """
    sqrt(log 2) (S + a X) on V_{2^-kappa N} against psi on the embedded points.

    Variances match exactly (Var psi = log 2 (Var S + a^2)); the increments of
    psi dominate, so 1/2 P(max sqrt(log 2) S >= l) <= P(max psi >= l).

    Raises:
        KappaTooSmallError: If no admissible kappa satisfies the checks
    """
    if kappa != "auto":
        return _lower_at(p, n, int(kappa))
    for candidate in range(3, n):
        try:
            spec = _lower_at(p, n, candidate)
        except KappaTooSmallError:
            continue
        if spec.slepian.passed:
            logger.info("lower coupling: kappa=%d", candidate)
            return spec
    raise KappaTooSmallError(n - 1, (0, 0), f"no kappa in [3, {n - 1}] works for n={n}")


def build_mean_upper_chain(p: StepProfile, n: int) -> tuple[CouplingSpec, SudakovFerniqueReport]:
    """
    Smallest C_1 with E(psi_v - psi_w)^2 <= log 2 E(S_v - S_w)^2 + 2 C_1^2 on V_N.

    Adding C_1 times i.i.d. noise to sqrt(log 2) S makes the one-sided
    Sudakov-Fernique hypothesis hold, so E[max psi] <= E[max sqrt(log 2) S] + C_1 E[max noise].
    """
    grid = GridSize(n)
    vertices = grid.vertices()
    cov = cov_psi(p, grid)
    cov_s = LOG2 * cov_mibrw(p, grid).matrix(vertices)
    dx, ds = np.diag(cov), np.diag(cov_s)
    gap = (dx[:, None] + dx[None, :] - 2 * cov) - (ds[:, None] + ds[None, :] - 2 * cov_s)
    np.fill_diagonal(gap, 0.0)
    c1 = math.sqrt(max(0.0, float(gap.max())) / 2)
    report = sudakov_fernique_gap(cov, cov_s + c1 * c1 * np.eye(len(vertices)))
    spec = CouplingSpec(direction="mean-upper", n=n, c1=c1,
                        vertices=[v.as_tuple() for v in vertices],
                        embedding=[v.as_tuple() for v in vertices])
    return spec, report


def lower_chain_window(n: int) -> tuple[GridSize, list[tuple[int, int]], list[tuple[int, int]]]:
    """V_{N/4} and its image V_{N/4} + (N/2, N/2) in V_N."""
    if n < 3:
        raise RangeError("the TMIBRW window needs n >= 3")
    small = GridSize(n - 2)
    half = (1 << n) // 2
    local = [v.as_tuple() for v in small.vertices()]
    return small, local, [(half + x, half + y) for x, y in local]


def build_mean_lower_chain(p: StepProfile, n: int) -> tuple[CouplingSpec, SudakovFerniqueReport]:
    """
    Smallest k0 with E(psi_x - psi_y)^2 >= log 2 rho_{N/4,k0}(x, y) on the window.

    Then E[max psi] >= sqrt(log 2) E[max S^{N/4,k0}] by Sudakov-Fernique.
    """
    grid = GridSize(n)
    small, local, image = lower_chain_window(n)
    indices = np.array([x * grid.N + y for x, y in image])
    cov = cov_psi_rows(p, grid, indices)
    for k0 in range(0, small.n + 1):
        cov_s = LOG2 * cov_mibrw(p, small, k0).matrix(local)
        report = sudakov_fernique_gap(cov_s, cov)
        if report.one_sided:
            logger.info("mean lower chain: k0=%d", k0)
            spec = CouplingSpec(direction="mean-lower", n=n, k0=k0, vertices=local, embedding=image)
            return spec, report
    raise KappaTooSmallError(small.n, (0, 0), "no truncation level k0 makes the increments ordered")


def tail_inequality(lhs: np.ndarray, rhs: np.ndarray, levels: list[float], factor: float,
                    relation: str, level: float = 0.95) -> InequalityReport:
    """
    Check P(lhs >= l) <= factor * P(rhs >= l) on a grid with one-sided Wilson intervals.

    A point fails only if the lower bound for the left side exceeds factor times
    the upper bound for the right side.
    """
    lhs, rhs = np.asarray(lhs), np.asarray(rhs)
    two_sided = 2 * level - 1
    points = []
    for value in levels:
        cl, cr = int(np.sum(lhs >= value)), int(np.sum(rhs >= value))
        l_lo, l_hi = wilson_interval(cl, len(lhs), two_sided)
        r_lo, r_hi = wilson_interval(cr, len(rhs), two_sided)
        points.append(InequalityPoint(
            level=float(value), lhs=cl / len(lhs), rhs=cr / len(rhs),
            lhs_ci=(float(l_lo), float(l_hi)), rhs_ci=(float(r_lo), float(r_hi)),
            holds=bool(l_lo <= factor * r_hi),
        ))
    return InequalityReport(relation=relation, factor=factor, points=points,
                            holds=all(point.holds for point in points))
