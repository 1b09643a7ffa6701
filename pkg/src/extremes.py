"""
Extreme Statistics

Monte Carlo distributions of field maxima, empirical right/left tails around
the analytic centring, tail-rate fits, the first-order ratio table and the
tightness diagnostics (Dekking-Host gap, Gini/MAD reduction, IQR trend).
"""

from __future__ import annotations

import logging
import math

import numpy as np
import pandas as pd

from src.comparison import borell_tail
from src.covariance import cov_mibrw, cov_psi, slope_verdict
from src.errors import DomainError, InsufficientDataError, RangeError
from src.green import Rectangle, green_matrix
from src.profile import LOG2, SQRT_LOG2, StepProfile, effective_profile, expected_max, mibrw_centring
from src.samplers import BLOCK_KEY, FieldSpec, ibrw_variance, map_blocks, sample_block
from src.schemas import DekkingHostReport, RateFit, TailPoint, TailReport
from src.utils import (STREAM_TAGS, derive_seed, make_rng, replicate_blocks, thread_map,
                       wilson_interval)

logger = logging.getLogger(__name__)

# Minimum exceedances per tail point used in a fit
MIN_EXCEEDANCES = 50

# Minimum number of tail points for a fit
MIN_POINTS = 4

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def _profile_of(spec: FieldSpec) -> StepProfile:
    profile = spec.profile if spec.profile is not None else StepProfile.preset("flat")
    return getattr(profile, "profile", profile)


def summarize(maxima: np.ndarray) -> dict[str, float]:
    """Mean, variance and quantiles of a sample of maxima."""
    summary = {
        "mean": float(np.mean(maxima)),
        "var": float(np.var(maxima, ddof=1)) if maxima.size > 1 else 0.0,
        "min": float(np.min(maxima)),
        "max": float(np.max(maxima)),
    }
    for q, value in zip(QUANTILES, np.quantile(maxima, QUANTILES)):
        summary[f"q{int(round(q * 100)):02d}"] = float(value)
    return summary


def mc_max(spec: FieldSpec, replicates: int, seed: int, threads: int = 1,
           vertices: list[tuple[int, int]] | None = None) -> tuple[np.ndarray, dict[str, float]]:
    """
    Seeded sample of max_v field_v over V_N (or over the given vertices).

    Args:
        spec: Field kind and parameters
        replicates: Number of independent fields
        seed: Experiment seed
        threads: Worker cap; the result does not depend on it
        vertices: Optional subset of V_N

    Returns:
        (maxima in replicate order, summary statistics)
    """
    if vertices is None:
        def reducer(block: np.ndarray) -> np.ndarray:
            return block.reshape(block.shape[0], -1).max(axis=1)
    else:
        xs, ys = (np.array(c) for c in zip(*vertices))

        def reducer(block: np.ndarray) -> np.ndarray:
            return block[:, xs, ys].max(axis=1)

    maxima = np.concatenate(map_blocks(spec, replicates, seed, reducer, threads))
    return maxima, summarize(maxima)


def tail_table(maxima: np.ndarray, centring: float, grid: list[float],
               side: str = "right", level: float = 0.95) -> pd.DataFrame:
    """
    Empirical tail probabilities with Wilson intervals on one shared pool.

    side="right" counts max >= centring + x, side="left" counts max <= centring - x.

    Returns:
        DataFrame with columns x, count, phat, ci_lo, ci_hi
    """
    maxima = np.asarray(maxima)
    xs = np.asarray(sorted(grid), dtype=float)
    if side == "right":
        counts = (maxima[None, :] >= centring + xs[:, None]).sum(axis=1)
    elif side == "left":
        counts = (maxima[None, :] <= centring - xs[:, None]).sum(axis=1)
    else:
        raise DomainError(f"unknown tail side '{side}'")
    lo, hi = wilson_interval(counts, maxima.size, level)
    return pd.DataFrame({"x": xs, "count": counts, "phat": counts / maxima.size,
                         "ci_lo": lo, "ci_hi": hi})


def _fit_log_tail(table: pd.DataFrame, prefactor: bool, min_count: int,
                  min_points: int, total: int) -> tuple[float, float, int]:
    usable = table[table["count"] >= min_count]
    if len(usable) < min_points:
        raise InsufficientDataError(
            f"{len(usable)} tail points with >= {min_count} exceedances; need {min_points}")
    x = usable["x"].to_numpy()
    phat = usable["phat"].to_numpy()
    y = np.log(phat)
    if prefactor:
        y = y - np.log1p(x)
    # delta-method standard deviation of log p-hat
    sd = np.sqrt((1 - phat) / (phat * total))
    sd = np.where(sd > 0, sd, 1.0 / math.sqrt(total))
    coef, cov = np.polyfit(x, y, 1, w=1.0 / sd, cov="unscaled")
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0))), len(usable)


def right_tail_rate(table: pd.DataFrame, total: int, prefactor: bool = False,
                    min_count: int = MIN_EXCEEDANCES, min_points: int = MIN_POINTS) -> RateFit:
    """
    Weighted least-squares slope of log P-hat(max >= c + x) against x.

    With prefactor the fit is of log P-hat - log(1 + x), the polynomial
    correction present when sigma_1 equals sigma-bar_1.

    Raises:
        InsufficientDataError: If fewer than min_points points have min_count exceedances
    """
    slope, se, points = _fit_log_tail(table, prefactor, min_count, min_points, total)
    return RateFit(rate=slope, ci_lo=slope - 1.96 * se, ci_hi=slope + 1.96 * se,
                   points=points, prefactor=prefactor)


def left_tail_check(table: pd.DataFrame, total: int, min_count: int = 20,
                    min_points: int = 3) -> tuple[RateFit, bool]:
    """
    Fit P-hat(max <= c - l) ~ exp(-c' l) and check c' > 0 with its CI excluding 0.

    Returns:
        (fit with rate c', verdict)
    """
    slope, se, points = _fit_log_tail(table, False, min_count, min_points, total)
    fit = RateFit(rate=-slope, ci_lo=-slope - 1.96 * se, ci_hi=-slope + 1.96 * se, points=points)
    return fit, fit.ci_lo > 0


def default_x_grid(n: int) -> list[float]:
    """x in {0, 0.25, ..., floor(sqrt(log N))}."""
    top = math.floor(math.sqrt(n * LOG2))
    return [0.25 * i for i in range(int(4 * max(top, 1)) + 1)]


def default_lambda_grid(n: int) -> list[float]:
    """l in {0, 0.25, ...} up to (log log N)^{2/3}, at least up to 0.5."""
    loglog = math.log(n * LOG2) if n * LOG2 > 1 else 0.0
    top = max(loglog ** (2.0 / 3.0), 0.5)
    return [0.25 * i for i in range(int(math.floor(top / 0.25)) + 1)]


def analytic_centring(spec: FieldSpec) -> tuple[float, str]:
    """m_N for psi-scale kinds, M_N^* for walks on the S-scale."""
    p = _profile_of(spec)
    if spec.s_scale:
        return mibrw_centring(p, spec.n, spec.n), "M_N*"
    return expected_max(p, spec.n), "m_N"


def predicted_rate(spec: FieldSpec) -> float:
    """-2 / sigma-bar_1, times sqrt(log 2) on the S-scale."""
    first = effective_profile(_profile_of(spec)).bar_sigmas[0]
    rate = -2.0 / first
    return rate * SQRT_LOG2 if spec.s_scale else rate


def build_tail_report(spec: FieldSpec, maxima: np.ndarray, x_grid: list[float] | None = None,
                      lambda_grid: list[float] | None = None, recentre: bool = False,
                      prefactor: bool | None = None) -> TailReport:
    """
    Right and left tails of the maximum around its centring with fitted rates.

    Failed fits (too few exceedances) leave the fit empty and add a note.
    """
    notes: list[str] = []
    if recentre:
        centring, centring_kind = float(np.mean(maxima)), "empirical"
    else:
        centring, centring_kind = analytic_centring(spec)
    p = _profile_of(spec)
    if prefactor is None:
        prefactor = abs(p.sigmas[0] - effective_profile(p).bar_sigmas[0]) <= 1e-12
    right = tail_table(maxima, centring, x_grid or default_x_grid(spec.n), "right")
    left = tail_table(maxima, centring, lambda_grid or default_lambda_grid(spec.n), "left")
    target = predicted_rate(spec)
    right_fit = left_fit = None
    try:
        right_fit = right_tail_rate(right, maxima.size, prefactor)
    except InsufficientDataError as exc:
        notes.append(f"right tail: {exc}")
    try:
        left_fit, verdict = left_tail_check(left, maxima.size)
        if not verdict:
            notes.append("left tail: decay constant not separated from 0")
    except InsufficientDataError as exc:
        notes.append(f"left tail: {exc}")
    in_ci = None if right_fit is None else bool(right_fit.ci_lo <= target <= right_fit.ci_hi)

    def points(table: pd.DataFrame) -> list[TailPoint]:
        return [TailPoint(x=float(r.x), count=int(r.count), phat=float(r.phat),
                          ci_lo=float(r.ci_lo), ci_hi=float(r.ci_hi))
                for r in table.itertuples(index=False)]

    return TailReport(kind=spec.kind, n=spec.n, replicates=int(maxima.size), centring=centring,
                      centring_kind=centring_kind, right_tail=points(right), right_fit=right_fit,
                      predicted_rate=target, rate_in_ci=in_ci, left_tail=points(left),
                      left_fit=left_fit, summary=summarize(maxima), notes=notes)


def max_variance(spec: FieldSpec) -> float:
    """Largest pointwise variance of the field."""
    grid = spec.grid
    if spec.kind == "dgff":
        if grid.N <= 2:
            return 0.0
        return float(np.max(np.diag(green_matrix(Rectangle.box(grid)).values)))
    if spec.kind == "psi":
        return float(np.max(np.diag(cov_psi(spec.profile, grid))))
    if spec.kind == "ibrw":
        return ibrw_variance(spec.profile, spec.n, spec.kappa)
    return cov_mibrw(spec.profile, grid, spec.k0).variance


def borell_check(maxima: np.ndarray, varmax: float, xs: list[float]) -> pd.DataFrame:
    """Empirical P(|max - mean max| > x) next to 2 exp(-x^2 / (2 varmax))."""
    centred = np.abs(maxima - np.mean(maxima))
    rows = []
    for x in xs:
        empirical = float(np.mean(centred > x))
        bound = borell_tail(varmax, x)
        rows.append({"x": x, "empirical": empirical, "bound": bound, "holds": empirical <= bound})
    return pd.DataFrame(rows)


def first_order_table(specs: list[FieldSpec], maxima: list[np.ndarray]) -> pd.DataFrame:
    """Rows n, mean_max, ratio, target, centred_gap from already sampled maxima."""
    rows = []
    for spec, sample in zip(specs, maxima):
        mean = float(np.mean(sample))
        scale = SQRT_LOG2 if spec.s_scale else 1.0
        try:
            centring, _ = analytic_centring(spec)
            gap = mean - centring
        except RangeError:
            gap = float("nan")
        rows.append({"n": spec.n, "mean_max": mean,
                     "ratio": scale * mean / (2 * spec.n * LOG2),
                     "target": effective_profile(_profile_of(spec)).first_order(),
                     "centred_gap": gap})
    return pd.DataFrame(rows)


def first_order_check(p: StepProfile, n_list: list[int], replicates: int, seed: int,
                      kind: str = "mibrw", threads: int = 1) -> pd.DataFrame:
    """
    E[max]/(2 log N) per n next to I_{sigma-bar}(1), and the centred gap.

    Walks on the S-scale are multiplied by sqrt(log 2) first.

    Raises:
        RangeError: If n_list is not ascending
    """
    if list(n_list) != sorted(n_list):
        raise RangeError("n_list must be ascending")
    specs = [FieldSpec(kind, n, None if kind == "dgff" else p) for n in n_list]
    maxima = [mc_max(spec, replicates, seed, threads)[0] for spec in specs]
    return first_order_table(specs, maxima)


def dekking_host_gap(p: StepProfile, n: int, replicates: int, seed: int, kind: str = "psi",
                     threads: int = 1) -> DekkingHostReport:
    """
    E|M_N - M'_N| against 2 E[M_{4N} - M_N] for independent copies.

    The left side pairs the first and second halves of a 2R pool; the right
    side adds an independent pool on the 4N grid, drawn under a seed derived
    from the dekking_host stream.

    Raises:
        SizeLimitError: If 4N exceeds the sampler limit
    """
    profile = None if kind == "dgff" else p
    small, _ = mc_max(FieldSpec(kind, n, profile), 2 * replicates, seed, threads)
    large_seed = derive_seed(seed, STREAM_TAGS["dekking_host"], n)
    large, _ = mc_max(FieldSpec(kind, n + 2, profile), replicates, large_seed, threads)
    diff = np.abs(small[:replicates] - small[replicates:])
    lhs, lhs_se = float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(replicates))
    rhs = 2 * float(large.mean() - small.mean())
    rhs_se = 2 * math.sqrt(large.var(ddof=1) / replicates + small.var(ddof=1) / (2 * replicates))
    try:
        analytic = 2 * (expected_max(p, n + 2) - expected_max(p, n))
    except RangeError:
        analytic = None
    return DekkingHostReport(n=n, lhs=lhs, lhs_se=lhs_se, rhs=rhs, rhs_se=rhs_se,
                             analytic_rhs=analytic, holds=lhs - 3 * lhs_se <= rhs + 3 * rhs_se)


def tightness_reduction(samples: np.ndarray) -> dict[str, float | bool]:
    """
    Mean absolute deviation E|A - EA| against the Gini mean difference E|A - A'|.

    Computed on the empirical distribution (all ordered pairs), where
    MAD <= Gini holds exactly.
    """
    a = np.sort(np.asarray(samples, dtype=float))
    size = a.size
    if size == 0:
        raise InsufficientDataError("no samples")
    ranks = 2 * np.arange(size) - size + 1
    gini = float(2 * np.dot(ranks, a) / size**2)
    mad = float(np.mean(np.abs(a - a.mean())))
    return {"gini": gini, "mad": mad, "holds": mad <= gini + 1e-12}


def iqr_trend(centred: dict[int, np.ndarray], tolerance: float = 0.05,
              reference_slope: float = LOG2) -> tuple[pd.DataFrame, str]:
    """Interquartile range of the centred maximum per n and its bounded/growing verdict."""
    ns = sorted(centred)
    iqrs = [float(np.subtract(*np.quantile(centred[n], [0.75, 0.25]))) for n in ns]
    table = pd.DataFrame({"n": ns, "iqr": iqrs})
    _, _, verdict = slope_verdict(ns, iqrs, reference_slope, tolerance)
    return table, verdict


def noise_monotonicity(spec: FieldSpec, replicates: int, seed: int, scale: float = 1.0,
                       threads: int = 1) -> dict[str, float | bool]:
    """
    E[max X] against E[max (X + scale * g)] with i.i.d. standard normals g.

    Adding independent centred noise never lowers the expected maximum.
    """
    spec.validate()

    def work(item: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        block, size = item
        values = sample_block(spec, seed, block, size).reshape(size, -1)
        noise = make_rng(seed, STREAM_TAGS["noise"], BLOCK_KEY, block).standard_normal(values.shape)
        return values.max(axis=1), (values + scale * noise).max(axis=1)

    parts = thread_map(work, replicate_blocks(replicates), threads)
    plain = np.concatenate([p for p, _ in parts])
    noisy = np.concatenate([q for _, q in parts])
    gain = noisy - plain
    se = float(gain.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    return {"mean_max": float(plain.mean()), "mean_max_noisy": float(noisy.mean()),
            "gain": float(gain.mean()), "gain_se": se,
            "holds": bool(gain.mean() + 3 * se >= 0)}
