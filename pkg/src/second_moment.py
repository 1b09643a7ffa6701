"""
Second Moment Method

Path events of the modified walk along its scale pieces, the counter h_N(y)
over the window V'_N, its first and second moments, the Paley-Zygmund lower
bound on the right tail and the calibration of the barrier constant C_f.

Path time t runs over the coarsest levels: X_v(t) is the sum of the MIBRW
levels n, n-1, ..., n-t+1, so Var X_v(t) = n I(t/n) on grid-aligned profiles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from src.errors import DomainError, MethodUnsupportedError, RangeError, ZeroFirstMomentError
from src.lattice import GridSize, Vertex, torus_offsets_array
from src.profile import (EffectiveProfile, StepProfile, barrier, centring_increment,
                         effective_profile, mibrw_centring)
from src.samplers import FieldSample, FieldSpec, map_blocks
from src.schemas import MomentEstimate, PaleyZygmund
from src.utils import BLOCK_SIZE, STREAM_TAGS, make_rng, replicate_blocks, wilson_interval

logger = logging.getLogger(__name__)

# Candidate barrier constants, smallest first
CF_CANDIDATES = (1.0, 2.0, 4.0, 8.0)

# Tube probability the calibrated C_f must reach
CF_TARGET = 0.5


@dataclass(frozen=True, eq=False)
class PathEventSpec:
    """Intervals, optimal-path ratios and barriers defining C_v^{N,y}."""

    profile: StepProfile
    effective: EffectiveProfile
    n: int
    y: float
    cf: float
    times: tuple[int, ...]  # T_0 = 0 < T_1 < ... < T_m = n
    variances: np.ndarray  # Var X(t), t = 0..n
    lower: tuple[float, ...]  # interval I(i) = [lower[i-1], upper[i-1]]
    upper: tuple[float, ...]
    ratios: np.ndarray  # (V(k) - V(T_{i-1})) / (V(T_i) - V(T_{i-1})) for k in its piece
    barriers: np.ndarray  # f_{k,n}

    @classmethod
    def build(cls, p: StepProfile, n: int, y: float, cf: float) -> PathEventSpec:
        """
        Derive every constraint of the path event for (p, n, y, C_f).

        Piece ends t^i = lambda^i n are rounded to integer levels.

        Raises:
            DomainError: If y < 0 or C_f <= 0
            RangeError: If two rounded piece ends coincide
        """
        if y < 0:
            raise DomainError("y must be non-negative")
        if not cf > 0:
            raise DomainError("C_f must be positive")
        eff = effective_profile(p)
        times = tuple(int(round(lam * n)) for lam in eff.bar_lambdas)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise RangeError(f"n={n} too small: rounded piece ends {times} are not increasing")
        steps = np.array([p.sigma_at(j / n) ** 2 for j in range(n)])
        variances = np.concatenate([[0.0], np.cumsum(steps)])
        lower, upper = [], []
        ratios = np.ones(n + 1)
        for i in range(1, eff.m + 1):
            centre = centring_increment(p, n, i) + (y if i == 1 else 0.0)
            lower.append(centre - 1.0)
            upper.append(centre)
            a, b = times[i - 1], times[i]
            ratios[a + 1:b + 1] = (variances[a + 1:b + 1] - variances[a]) / (variances[b] - variances[a])
        barriers = np.array([barrier(p, n, k, cf) for k in range(n + 1)])
        return cls(p, eff, n, y, cf, times, variances, tuple(lower), tuple(upper), ratios, barriers)

    @property
    def grid(self) -> GridSize:
        return GridSize(self.n)

    def window(self) -> tuple[slice, slice]:
        """V'_N = V_{N/2} + (N/4, N/4)."""
        N = self.grid.N
        side = slice(N // 4, N // 4 + N // 2)
        return side, side

    def window_size(self) -> int:
        return (self.grid.N // 2) ** 2

    def direct_threshold(self) -> float:
        """M_N^* + y, the level the full field must exceed somewhere in V_N."""
        return mibrw_centring(self.profile, self.n, self.n) + self.y

    def to_dict(self) -> dict:
        return {"n": self.n, "y": self.y, "cf": self.cf, "times": list(self.times),
                "intervals": [list(pair) for pair in zip(self.lower, self.upper)]}


def coarse_paths(levels: np.ndarray) -> np.ndarray:
    """
    X(t) for t = 0..n from level contributions (..., n + 1, N, N).

    X(n) stops at level 1: the base level 0 never enters a path event, so
    X(n) differs from the field value S_v by that level.
    """
    flipped = levels[..., ::-1, :, :]
    partial = np.cumsum(flipped, axis=-3)[..., :-1, :, :]
    zeros = np.zeros_like(partial[..., :1, :, :])
    return np.concatenate([zeros, partial], axis=-3)


def path_events(levels: np.ndarray, spec: PathEventSpec, r: int | None = None) -> np.ndarray:
    """
    Indicator of C_v^{N,y}(r) at every vertex.

    The constraint at path time k is the interval condition when k is a piece
    end and the tube condition |X(k) - X(T_{i-1}) - ratio_k dX_i| <= f_k
    otherwise; C(r) imposes every constraint with k <= r.

    Args:
        levels: Level contributions of shape (..., n + 1, N, N)
        spec: Path event definition
        r: Last path time constrained (default n)

    Returns:
        Boolean array (..., N, N)
    """
    r = spec.n if r is None else r
    if not 0 <= r <= spec.n:
        raise RangeError(f"r={r} outside [0, {spec.n}]")
    paths = coarse_paths(levels)
    ok = np.ones(paths.shape[:-3] + paths.shape[-2:], dtype=bool)
    for i in range(1, len(spec.times)):
        a, b = spec.times[i - 1], spec.times[i]
        if a >= r:
            break
        start = paths[..., a, :, :]
        increment = paths[..., b, :, :] - start
        for k in range(a + 1, min(b - 1, r) + 1):
            deviation = paths[..., k, :, :] - start - spec.ratios[k] * increment
            ok &= np.abs(deviation) <= spec.barriers[k]
        if b <= r:
            ok &= (increment >= spec.lower[i - 1]) & (increment <= spec.upper[i - 1])
    return ok


def path_event(sample: FieldSample, v: Vertex, spec: PathEventSpec, r: int | None = None) -> bool:
    """
    C_v^{N,y}(r) for one vertex of a retained-levels MIBRW sample.

    Raises:
        DomainError: If the sample carries no level contributions
    """
    if sample.levels is None:
        raise DomainError("path events need a MIBRW sample with retained levels")
    if sample.grid.n != spec.n:
        raise RangeError("sample and path spec use different grids")
    return bool(path_events(sample.levels, spec, r)[v.x, v.y])


def _window_counts(events: np.ndarray, spec: PathEventSpec) -> np.ndarray:
    wx, wy = spec.window()
    return events[..., wx, wy].sum(axis=(-2, -1))


def _pairs_by_scale(events: np.ndarray, spec: PathEventSpec) -> np.ndarray:
    """Ordered pairs (v, w) in h^2 grouped by shared-scale count r(v, w) = 0..n."""
    wx, wy = spec.window()
    N, n = spec.grid.N, spec.n
    out = np.zeros((events.shape[0], n + 1))
    for rep, window in enumerate(events[:, wx, wy]):
        xs, ys = np.nonzero(window)
        if xs.size == 0:
            continue
        xs, ys = xs + wx.start, ys + wy.start
        r1, r2 = torus_offsets_array(xs[:, None], ys[:, None], xs[None, :], ys[None, :], N)
        d = np.maximum(r1, r2).ravel()
        shared = n - np.where(d > 0, np.floor(np.log2(np.maximum(d, 1))).astype(int) + 1, 0)
        out[rep] = np.bincount(shared, minlength=n + 1)[: n + 1]
    return out


@dataclass(frozen=True, eq=False)
class MomentPool:
    """Per-replicate h_N(y), its r-stratified square and the direct tail indicator."""

    h: np.ndarray
    by_scale: np.ndarray
    direct: np.ndarray

    @property
    def replicates(self) -> int:
        return int(self.h.size)


def direct_events(values: np.ndarray, spec: PathEventSpec) -> np.ndarray:
    """max_{V_N} S > M_N^* + y for each replicate field of shape (..., N, N)."""
    return values.max(axis=(-2, -1)) > spec.direct_threshold()


def moment_pool(spec: PathEventSpec, replicates: int, seed: int, threads: int = 1) -> MomentPool:
    """Sample `replicates` MIBRW fields and evaluate h_N(y) and the direct event on each."""
    field = FieldSpec("mibrw", spec.n, spec.profile)

    def reducer(block) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        values, levels = block
        events = path_events(levels, spec)
        return (_window_counts(events, spec), _pairs_by_scale(events, spec),
                direct_events(values, spec))

    parts = map_blocks(field, replicates, seed, reducer, threads, keep_levels=True)
    return MomentPool(h=np.concatenate([p[0] for p in parts]).astype(float),
                      by_scale=np.concatenate([p[1] for p in parts]),
                      direct=np.concatenate([p[2] for p in parts]))


def tube_probability(spec: PathEventSpec, replicates: int, seed: int) -> tuple[float, float]:
    """
    P(every tube constraint holds) for one vertex, by Monte Carlo over bridges.

    Within each piece the bridge X(k) - X(T_{i-1}) - ratio_k dX_i is independent
    of the piece increment, so the tube probability does not depend on the
    interval constraints.

    Returns:
        (estimate, standard error)
    """
    steps = np.sqrt(np.diff(spec.variances))
    inside = 0
    for block, size in replicate_blocks(replicates):
        rng = make_rng(seed, STREAM_TAGS["bridge"], block)
        paths = np.concatenate([np.zeros((size, 1)),
                                np.cumsum(rng.standard_normal((size, spec.n)) * steps, axis=1)], axis=1)
        ok = np.ones(size, dtype=bool)
        for a, b in zip(spec.times, spec.times[1:]):
            increment = paths[:, b] - paths[:, a]
            for k in range(a + 1, b):
                ok &= np.abs(paths[:, k] - paths[:, a] - spec.ratios[k] * increment) <= spec.barriers[k]
        inside += int(ok.sum())
    phat = inside / replicates
    return phat, math.sqrt(phat * (1 - phat) / replicates)


def endpoint_probability(spec: PathEventSpec) -> float:
    """P(X(T_1) in I(1)): exact Gaussian integral with variance Var X(T_1)."""
    sd = math.sqrt(spec.variances[spec.times[1]])
    dist = stats.norm(scale=sd)
    return float(dist.cdf(spec.upper[0]) - dist.cdf(spec.lower[0]))


def first_moment(spec: PathEventSpec, method: str = "monte-carlo", replicates: int = 2000,
                 seed: int = 0, threads: int = 1, pool: MomentPool | None = None) -> MomentEstimate:
    """
    E[h_N(y)].

    Time Complexity: O(replicates * n * N^2) for monte-carlo

    Args:
        spec: Path event definition
        method: "monte-carlo" (any profile) or "semi-analytic" (one effective scale)
        replicates: Fields (monte-carlo) or bridges (semi-analytic)
        seed: Experiment seed
        threads: Worker cap
        pool: Reuse an existing pool instead of sampling

    Returns:
        MomentEstimate; the semi-analytic value is |V'| P(endpoint) P(tube)

    Raises:
        MethodUnsupportedError: If semi-analytic is requested with more than one scale
    """
    if method == "semi-analytic":
        if spec.effective.m != 1:
            raise MethodUnsupportedError("the semi-analytic first moment needs one effective scale")
        if spec.effective.weights[0] == 3:
            logger.warning("semi-analytic first moment on a profile equal to its hull")
        endpoint = endpoint_probability(spec)
        tube, tube_se = tube_probability(spec, replicates, seed)
        size = spec.window_size()
        return MomentEstimate(value=size * endpoint * tube, standard_error=size * endpoint * tube_se,
                              method="semi-analytic",
                              details={"endpoint": endpoint, "tube": tube, "window": size})
    if method != "monte-carlo":
        raise MethodUnsupportedError(f"unknown method '{method}'")
    pool = pool or moment_pool(spec, replicates, seed, threads)
    h = pool.h
    se = float(h.std(ddof=1) / math.sqrt(h.size)) if h.size > 1 else 0.0
    return MomentEstimate(value=float(h.mean()), standard_error=se, method="monte-carlo",
                          details={"replicates": pool.replicates})


def second_moment(spec: PathEventSpec, replicates: int = 2000, seed: int = 0, threads: int = 1,
                  pool: MomentPool | None = None) -> MomentEstimate:
    """
    E[h_N(y)^2] with its decomposition over the shared-scale count r(v, w).

    details["by_scale"][r] is the mean number of ordered pairs (v, w) with both
    events and r(v, w) = r; r = n collects the diagonal v = w.
    """
    pool = pool or moment_pool(spec, replicates, seed, threads)
    h2 = pool.h**2
    se = float(h2.std(ddof=1) / math.sqrt(h2.size)) if h2.size > 1 else 0.0
    by_scale = {int(r): float(v) for r, v in enumerate(pool.by_scale.mean(axis=0))}
    return MomentEstimate(value=float(h2.mean()), standard_error=se, method="monte-carlo",
                          details={"replicates": pool.replicates, "by_scale": by_scale})


def paley_zygmund_bound(spec: PathEventSpec, replicates: int = 2000, seed: int = 0,
                        threads: int = 1, pool: MomentPool | None = None) -> PaleyZygmund:
    """
    E[h]^2 / E[h^2] next to the direct estimate of P(max_{V_N} S > M^* + y).

    Both come from one replicate pool; `holds` when the bound sits below the
    upper Wilson limit of the direct frequency.

    Raises:
        ZeroFirstMomentError: If no replicate has h > 0
    """
    pool = pool or moment_pool(spec, replicates, seed, threads)
    first = first_moment(spec, pool=pool)
    second = second_moment(spec, pool=pool)
    m1, m2 = first.value, second.value
    if m1 <= 0:
        raise ZeroFirstMomentError(f"E[h] = 0 at y={spec.y} over {pool.replicates} replicates")
    bound = m1 * m1 / m2
    # delta method on (h, h^2)
    grad = np.array([2 * m1 / m2, -m1 * m1 / (m2 * m2)])
    cov = np.cov(np.vstack([pool.h, pool.h**2])) / pool.replicates
    bound_se = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    count = int(pool.direct.sum())
    lo, hi = wilson_interval(count, pool.replicates)
    direct = count / pool.replicates
    c_tilde = max(0.0, (m2 - m1 * m1) / m1 - 1.0)
    return PaleyZygmund(y=spec.y, first_moment=first, second_moment=second, bound=bound,
                        bound_se=bound_se, direct_tail=direct, direct_ci=(float(lo), float(hi)),
                        c_tilde=c_tilde, holds=bool(bound <= hi + 1e-12))


def calibrate_cf(p: StepProfile, n: int, replicates: int = 4 * BLOCK_SIZE, seed: int = 0,
                 candidates: tuple[float, ...] = CF_CANDIDATES, target: float = CF_TARGET) -> float:
    """
    Smallest candidate C_f whose tube probability reaches the target.

    Falls back to the largest candidate (with a warning) when none does.
    """
    for cf in candidates:
        phat, _ = tube_probability(PathEventSpec.build(p, n, 0.0, cf), replicates, seed)
        logger.debug("C_f=%g: tube probability %.3f", cf, phat)
        if phat >= target:
            logger.info("calibrated C_f=%g (tube probability %.3f)", cf, phat)
            return cf
    logger.warning("no C_f in %s reaches tube probability %.2f", candidates, target)
    return candidates[-1]


def bridge_diagnostics(spec: PathEventSpec, replicates: int, seed: int,
                       threads: int = 1) -> dict[str, float]:
    """
    Endpoint/bridge orthogonality and bridge variance on the first piece, from MIBRW samples.

    Returns the largest |z| of the empirical covariance between X(T_1) and the
    bridge, and the largest |z| of the bridge variance against V(k)(1 - V(k)/V(T_1)).
    """
    centre = spec.grid.N // 2
    field = FieldSpec("mibrw", spec.n, spec.profile)

    def reducer(block) -> np.ndarray:
        _, levels = block
        return coarse_paths(levels[:, :, centre:centre + 1, centre:centre + 1])[:, :, 0, 0]

    paths = np.concatenate(map_blocks(field, replicates, seed, reducer, threads, keep_levels=True))
    end = spec.times[1]
    endpoint = paths[:, end]
    cov_z, var_z = 0.0, 0.0
    for k in range(1, end):
        bridge = paths[:, k] - spec.ratios[k] * endpoint
        product = (endpoint - endpoint.mean()) * (bridge - bridge.mean())
        cov_z = max(cov_z, abs(product.mean()) / (product.std(ddof=1) / math.sqrt(replicates)))
        expected = spec.variances[k] * (1 - spec.variances[k] / spec.variances[end])
        # Var of a sample variance of a Gaussian: 2 sigma^4 / (R - 1)
        se = math.sqrt(2.0 / (replicates - 1)) * expected
        if se > 0:
            var_z = max(var_z, abs(bridge.var(ddof=1) - expected) / se)
    return {"covariance_z": float(cov_z), "variance_z": float(var_z)}


def moments_table(p: StepProfile, n: int, y_grid: list[float], cf: float, replicates: int,
                  seed: int, method: str = "monte-carlo", threads: int = 1) -> list[dict]:
    """
    One row per y: E[h], E[h^2], the Paley-Zygmund bound and the direct tail.

    With method="semi-analytic" each row also carries the semi-analytic first
    moment and its z-score against the Monte Carlo value.
    """
    rows = []
    for y in y_grid:
        spec = PathEventSpec.build(p, n, y, cf)
        pool = moment_pool(spec, replicates, seed, threads)
        first = first_moment(spec, pool=pool)
        second = second_moment(spec, pool=pool)
        row = {"y": y, "first_moment": first.value, "first_se": first.standard_error,
               "second_moment": second.value, "second_se": second.standard_error}
        if method == "semi-analytic":
            semi = first_moment(spec, "semi-analytic", replicates, seed)
            combined = math.hypot(first.standard_error, semi.standard_error)
            row.update(semi_analytic=semi.value, semi_se=semi.standard_error,
                       agreement_z=abs(first.value - semi.value) / combined if combined > 0 else 0.0)
        try:
            pz = paley_zygmund_bound(spec, pool=pool)
            row.update(pz_bound=pz.bound, pz_se=pz.bound_se, direct_tail=pz.direct_tail,
                       direct_ci_lo=pz.direct_ci[0], direct_ci_hi=pz.direct_ci[1],
                       c_tilde=pz.c_tilde, holds=pz.holds)
        except ZeroFirstMomentError as exc:
            logger.warning("%s", exc)
            row.update(pz_bound=0.0, pz_se=0.0, direct_tail=float(pool.direct.mean()),
                       direct_ci_lo=None, direct_ci_hi=None, c_tilde=None, holds=True)
        rows.append(row)
    return rows
