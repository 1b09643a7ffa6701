"""
Covariance Oracle

Exact covariances of psi (dense linear algebra), of the IBRW and of the
(truncated) MIBRW (closed forms from box counting), and the sweeps that measure
the constants of the covariance comparison statements.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.config import get_settings
from src.errors import HypothesisError, RangeError, SizeLimitError
from src.green import Rectangle, green_matrix, increment_operator, psi_operator
from src.lattice import (GridSize, Vertex, branching_scale, common_box_count_array,
                         torus_offsets_array)
from src.profile import LOG2, StepProfile
from src.schemas import CovarianceReport, ItemReport
from src.utils import STREAM_TAGS, Checkpoint, make_rng

logger = logging.getLogger(__name__)

# Pairs beyond this count are subsampled
PAIR_LIMIT = 10_000

ITEM_KEYS = {"i": 1, "ii": 2, "iii": 3, "iv": 4}


def _coords(vertices) -> tuple[np.ndarray, np.ndarray]:
    arr = np.array([(v.x, v.y) if isinstance(v, Vertex) else tuple(v) for v in vertices], dtype=int)
    return arr[:, 0], arr[:, 1]


def _bit_length(values: np.ndarray, bits: int) -> np.ndarray:
    out = np.zeros_like(values)
    for b in range(bits + 1):
        out = np.where((values >> b) > 0, b + 1, out)
    return out


def cov_psi(p: StepProfile, grid: GridSize) -> np.ndarray:
    """
    Exact covariance A G A^T of psi over all of V_N (x-major indices).

    Raises:
        SizeLimitError: If N exceeds the dense limit
    """
    return cov_psi_rows(p, grid, np.arange(grid.size))


def cov_psi_rows(p: StepProfile, grid: GridSize, indices: np.ndarray) -> np.ndarray:
    """Covariance of psi restricted to the given vertex indices."""
    if grid.N <= 2:
        return np.zeros((len(indices), len(indices)))
    green = green_matrix(Rectangle.box(grid))
    rows = psi_operator(p, grid.n)[np.asarray(indices)][:, green.interior]
    left = np.asarray(rows @ green.values)
    cov = np.asarray(rows @ left.T).T
    return (cov + cov.T) / 2


@dataclass(frozen=True)
class IbrwCovariance:
    """Closed-form covariance of R (optionally evaluated at embedded points 2^kappa v)."""

    grid: GridSize
    level_variances: np.ndarray  # log 2 * sigma-tilde^2 per level of the big grid
    kappa: int = 0

    @property
    def variance(self) -> float:
        return float(self.level_variances.sum())

    def _suffix(self) -> np.ndarray:
        return np.concatenate([np.cumsum(self.level_variances[::-1])[::-1], [0.0]])

    def pairs(self, v_coords, w_coords) -> np.ndarray:
        vx, vy = (np.asarray(c) for c in v_coords)
        wx, wy = (np.asarray(c) for c in w_coords)
        kstar = np.maximum(_bit_length(vx ^ wx, self.grid.n), _bit_length(vy ^ wy, self.grid.n))
        first = np.where(kstar == 0, 0, kstar + self.kappa)
        return self._suffix()[first]

    def __call__(self, v: Vertex, w: Vertex) -> float:
        return float(self.pairs(([v.x], [v.y]), ([w.x], [w.y]))[0])

    def matrix(self, vertices) -> np.ndarray:
        x, y = _coords(vertices)
        return self.pairs((x[:, None], y[:, None]), (x[None, :], y[None, :]))


def cov_ibrw(tilde, grid: GridSize, kappa: int = 0) -> IbrwCovariance:
    """
    log 2 * sum of sigma-tilde^2((n-k)/n) over levels k where BD_k(v) = BD_k(w).

    With kappa > 0 the evaluator gives the covariance of R^{2^kappa N} at the
    embedded vertices 2^kappa v, 2^kappa w.
    """
    total = grid.n + kappa
    variances = LOG2 * np.array([tilde.sigma_at((total - k) / total) ** 2 for k in range(total + 1)])
    return IbrwCovariance(grid, variances, kappa)


@dataclass(frozen=True)
class MibrwCovariance:
    """Closed-form covariance of S^{N,k0} from common torus-box counts."""

    grid: GridSize
    k0: int
    level_variances: np.ndarray  # sigma((n-k)/n)^2, k = 0..n

    @property
    def variance(self) -> float:
        return float(self.level_variances[self.k0:].sum())

    def pairs(self, v_coords, w_coords) -> np.ndarray:
        N, n = self.grid.N, self.grid.n
        r1, r2 = torus_offsets_array(v_coords[0], v_coords[1], w_coords[0], w_coords[1], N)
        total = np.zeros(np.broadcast(r1, r2).shape)
        for k in range(self.k0, n + 1):
            total = total + 4.0 ** (-k) * self.level_variances[k] * common_box_count_array(r1, r2, k, N)
        return total

    def __call__(self, v: Vertex, w: Vertex) -> float:
        return float(self.pairs(([v.x], [v.y]), ([w.x], [w.y]))[0])

    def matrix(self, vertices) -> np.ndarray:
        x, y = _coords(vertices)
        return self.pairs((x[:, None], y[:, None]), (x[None, :], y[None, :]))

    def rho(self, v: Vertex, w: Vertex) -> float:
        """E[(S_v - S_w)^2]."""
        return 2 * self.variance - 2 * self(v, w)

    def rho_pairs(self, v_coords, w_coords) -> np.ndarray:
        return 2 * self.variance - 2 * self.pairs(v_coords, w_coords)


def cov_mibrw(p: StepProfile, grid: GridSize, k0: int = 0) -> MibrwCovariance:
    """
    E[S_v S_w] = sum_{k >= k0} 2^{-2k} sigma^2((n-k)/n) * common_box_count(v, w, k).

    Raises:
        RangeError: If k0 is outside [0, n]
    """
    if not 0 <= k0 <= grid.n:
        raise RangeError(f"k0={k0} outside [0, {grid.n}]")
    variances = np.array([p.sigma_at((grid.n - k) / grid.n) ** 2 for k in range(grid.n + 1)])
    return MibrwCovariance(grid, k0, variances)


def slope_verdict(ns: list[int], deviations: list[float], reference_slope: float,
                  tolerance: float) -> tuple[float, float, str]:
    """
    Least-squares slope of deviations against n and the bounded/growing verdict.

    A single grid size carries no slope and is "undetermined".

    Returns:
        (slope, threshold, verdict) with threshold = tolerance * reference_slope
    """
    threshold = tolerance * reference_slope
    if len(ns) < 2:
        return 0.0, threshold, "undetermined"
    slope = float(np.polyfit(np.asarray(ns, float), np.asarray(deviations, float), 1)[0])
    return slope, threshold, "bounded" if slope < threshold else "growing"


def overall_verdict(verdicts) -> str:
    """Worst item verdict: growing, then undetermined, then bounded."""
    verdicts = set(verdicts)
    for verdict in ("growing", "undetermined"):
        if verdict in verdicts:
            return verdict
    return "bounded"


def _pair_indices(count: int, limit: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    total = count * (count + 1) // 2
    if total <= limit:
        i, j = np.triu_indices(count)
        return i, j
    logger.warning("subsampling %d of %d pairs", limit, total)
    i = rng.integers(0, count, size=limit)
    j = rng.integers(0, count, size=limit)
    return np.minimum(i, j), np.maximum(i, j)


def _log_plus_array(d: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, np.log2(np.maximum(d, 1.0)))


def _item_i(n: int, rng, limit: int) -> tuple[float, int]:
    grid = GridSize(n)
    flat = cov_mibrw(StepProfile.preset("flat"), grid)
    i, j = _pair_indices(grid.size, limit, rng)
    vx, vy = np.divmod(i, grid.N)
    wx, wy = np.divmod(j, grid.N)
    r1, r2 = torus_offsets_array(vx, vy, wx, wy, grid.N)
    target = n - _log_plus_array(np.hypot(r1, r2))
    return float(np.max(np.abs(flat.pairs((vx, vy), (wx, wy)) - target))), len(i)


def _item_ii(p: StepProfile, n: int, rng, limit: int) -> tuple[float, int]:
    grid = GridSize(n)
    cov = cov_mibrw(p, grid)
    i, j = _pair_indices(grid.size, limit, rng)
    vx, vy = np.divmod(i, grid.N)
    wx, wy = np.divmod(j, grid.N)
    r1, r2 = torus_offsets_array(vx, vy, wx, wy, grid.N)
    scales = (n - _log_plus_array(np.hypot(r1, r2))) / n
    target = n * np.array([p.integrated(float(min(max(s, 0.0), 1.0))) for s in scales])
    return float(np.max(np.abs(cov.pairs((vx, vy), (wx, wy)) - target))), len(i)


def _window(n: int) -> tuple[GridSize, np.ndarray, np.ndarray, np.ndarray]:
    """V_N + (2N, 2N) inside V_{4N}: big-grid indices and local coordinates."""
    big = GridSize(n + 2)
    N = 1 << n
    lx, ly = np.divmod(np.arange(N * N), N)
    indices = (lx + 2 * N) * big.N + (ly + 2 * N)
    return big, indices, lx, ly


def _item_iii(n: int, rng, limit: int) -> tuple[float, int]:
    big, indices, lx, ly = _window(n)
    green = green_matrix(Rectangle.box(big))
    full_pos = np.full(big.size, -1)
    full_pos[green.interior] = np.arange(len(green.interior))
    pos = full_pos[indices]
    i, j = _pair_indices(len(indices), limit, rng)
    values = green.values[pos[i], pos[j]]
    dist = np.hypot(lx[i] - lx[j], ly[i] - ly[j])
    target = LOG2 * (n - _log_plus_array(dist))
    return float(np.max(np.abs(values - target))), len(i)


def _item_iv(p: StepProfile, n: int, rng, limit: int) -> tuple[float, int]:
    big, indices, lx, ly = _window(n)
    cov_big = cov_psi_rows(p, big, indices)
    cov_s = cov_mibrw(p, GridSize(n))
    i, j = _pair_indices(len(indices), limit, rng)
    target = LOG2 * cov_s.pairs((lx[i], ly[i]), (lx[j], ly[j]))
    return float(np.max(np.abs(cov_big[i, j] - target))), len(i)


def verify_cov_comp(p: StepProfile, n_range: list[int], items: list[str] | None = None,
                    seed: int = 0, pair_limit: int = PAIR_LIMIT, slope_tolerance: float = 0.05,
                    checkpoint: Checkpoint | None = None) -> CovarianceReport:
    """
    Measure the constants of the four covariance comparisons over n_range.

    i: homogeneous MIBRW vs n - log+ d^N; ii: MIBRW vs n I((n - log+ d^N)/n);
    iii: DGFF on V_{4N} (window V_N + (2N, 2N)) vs log 2 (n - log+ |v - w|);
    iv: psi on V_{4N} vs log 2 * E[S_v S_w] on the same window.
    Items iii/iv are skipped for n with 4N above the dense limit.
    """
    items = items or ["i", "ii", "iii", "iv"]
    limit = get_settings().max_dense_side
    checkpoint = checkpoint or Checkpoint(None, "")
    measured: dict[str, dict[int, tuple[float, int]]] = {item: {} for item in items}
    skipped: dict[str, list[int]] = {}
    for n in n_range:
        key = f"cov_comp_n{n}"
        saved = checkpoint.load(key) or {}
        for item in items:
            if item in saved:
                measured[item][n] = tuple(saved[item])
                continue
            rng = make_rng(seed, STREAM_TAGS["pairs"], n, ITEM_KEYS[item])
            if item in ("iii", "iv") and 4 * (1 << n) > limit:
                skipped.setdefault(item, []).append(n)
                continue
            if item == "i":
                measured[item][n] = _item_i(n, rng, pair_limit)
            elif item == "ii":
                measured[item][n] = _item_ii(p, n, rng, pair_limit)
            elif item == "iii":
                measured[item][n] = _item_iii(n, rng, pair_limit)
            else:
                measured[item][n] = _item_iv(p, n, rng, pair_limit)
            saved[item] = list(measured[item][n])
        checkpoint.save(key, saved)
        logger.info("cov_comp n=%d done", n)
    reports = {}
    for item, values in measured.items():
        ns = sorted(values)
        devs = [values[n][0] for n in ns]
        reference = 1.0 if item in ("i", "ii") else LOG2
        slope, threshold, verdict = slope_verdict(ns, devs, reference, slope_tolerance)
        reports[item] = ItemReport(deviations=dict(zip(ns, devs)),
                                   pairs={n: values[n][1] for n in ns},
                                   slope=slope, threshold=threshold, verdict=verdict)
    overall = overall_verdict(r.verdict for r in reports.values())
    return CovarianceReport(lemma="cov_comp", items=reports, verdict=overall,
                            details={"skipped": skipped, "profile": p.to_dict()})


def psi_variance_report(p: StepProfile, n_range: list[int], delta: float = 0.25,
                        slope_tolerance: float = 0.05) -> CovarianceReport:
    """
    Var psi_v - log N * I(1) (the constant alpha_0) and the off-diagonal
    deviation from log N * I(q_N(v, w)) on V_N^delta, divided by sqrt(log N).
    """
    alpha, ratio = {}, {}
    for n in n_range:
        grid = GridSize(n)
        log_n = n * LOG2
        cov = cov_psi(p, grid)
        alpha[n] = float(np.max(np.diag(cov)) - log_n * p.total_variance())
        inner = [grid.index(v) for v in grid.delta_interior(delta)]
        if not inner:
            continue
        sub = cov[np.ix_(inner, inner)]
        x, y = np.divmod(np.asarray(inner), grid.N)
        dist = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
        q = np.clip(1.0 - np.log(np.maximum(dist, 1.0)) / log_n, 0.0, 1.0)
        target = log_n * np.vectorize(p.integrated)(q)
        ratio[n] = float(np.max(np.abs(sub - target)) / math.sqrt(log_n))
    reports = {}
    for name, values in (("alpha0", alpha), ("offdiag_ratio", ratio)):
        ns = sorted(values)
        slope, threshold, verdict = slope_verdict(ns, [values[n] for n in ns], LOG2, slope_tolerance)
        reports[name] = ItemReport(deviations=values, slope=slope, threshold=threshold, verdict=verdict)
    overall = overall_verdict(r.verdict for r in reports.values())
    return CovarianceReport(lemma="psi_variance", items=reports, verdict=overall,
                            details={"profile": p.to_dict(), "delta": delta})


def increment_hypotheses(p: StepProfile, grid: GridSize, delta: float) -> list[str]:
    """Failed size hypotheses of the increment lemma (empty if all hold)."""
    failed = []
    gaps = [lam - prev for prev, lam in zip((0.0,) + p.lambdas[:-1], p.lambdas)]
    if min(2 ** (2 / gap) for gap in gaps) > grid.N:
        failed.append(f"N={grid.N} below min_i 2^(2/dlambda_i)")
    if not grid.N ** p.lambdas[0] > 1 / delta:
        failed.append(f"N^lambda_1 = {grid.N ** p.lambdas[0]:.4g} not above 1/delta = {1 / delta:.4g}")
    if not 0 < delta < 0.5:
        failed.append("delta outside (0, 1/2)")
    return failed


def verify_increment_lemma(p: StepProfile, grid: GridSize, delta: float, seed: int = 0,
                           pair_limit: int = 2000) -> CovarianceReport:
    """
    Exact E[d phi_v(lambda_i) d phi_w(lambda_j)] against dlambda_i log N 1{i=j}.

    Eligible pairs lie in V_N^delta with branching scale on the profile's
    scale grid; scales with lambda_i, lambda_j <= b_N(v, w) are compared.

    Raises:
        HypothesisError: If a size hypothesis fails
        SizeLimitError: If N exceeds the dense limit
    """
    failed = increment_hypotheses(p, grid, delta)
    if failed:
        raise HypothesisError(failed)
    if grid.N > get_settings().max_dense_side:
        raise SizeLimitError(f"N={grid.N} exceeds the dense limit")
    inner = grid.delta_interior(delta)
    rng = make_rng(seed, STREAM_TAGS["pairs"], grid.n, 99)
    i_idx, j_idx = _pair_indices(len(inner), pair_limit, rng)
    scales = np.array(p.lambdas)
    pairs, bscales = [], []
    for a, b in zip(i_idx, j_idx):
        v, w = inner[a], inner[b]
        scale = branching_scale(v, w, grid)
        if np.any(np.abs(scales - scale) < 1e-12):
            pairs.append((grid.index(v), grid.index(w)))
            bscales.append(scale)
    if not pairs:
        raise HypothesisError(["no pair in V_N^delta has its branching scale on the scale grid"])
    green = green_matrix(Rectangle.box(grid))
    rows = np.unique(np.array(pairs).ravel())
    position = {int(r): k for k, r in enumerate(rows)}
    ops = [increment_operator(p, grid, i)[rows][:, green.interior] for i in range(1, p.M + 1)]
    log_n = grid.n * LOG2
    same, cross, same_vertex = 0.0, 0.0, 0.0
    pv = np.array([position[a] for a, _ in pairs])
    pw = np.array([position[b] for _, b in pairs])
    bscales = np.array(bscales)
    for i in range(p.M):
        left = np.asarray(ops[i] @ green.values)
        for j in range(p.M):
            block = np.asarray(ops[j] @ left.T).T  # block[a, b] = Cov(d_i at a, d_j at b)
            eligible = (bscales >= max(p.lambdas[i], p.lambdas[j]) - 1e-12)
            values = block[pv, pw][eligible]
            if i == j:
                gap = p.lambdas[i] - (p.lambdas[i - 1] if i > 0 else 0.0)
                if values.size:
                    same = max(same, float(np.max(np.abs(values - gap * log_n))))
            else:
                if values.size:
                    cross = max(cross, float(np.max(np.abs(values))))
                # same vertex, different scales: martingale increments
                same_vertex = max(same_vertex, float(np.abs(np.diag(block)).max()))
    items = {
        "same_scale": ItemReport(deviations={grid.n: same}, pairs={grid.n: len(pairs)}),
        "cross_scale": ItemReport(deviations={grid.n: cross}, pairs={grid.n: len(pairs)}),
    }
    return CovarianceReport(lemma="increment", items=items, verdict="undetermined",
                            details={"same_vertex_cross_scale": same_vertex, "delta": delta,
                                     "N": grid.N, "profile": p.to_dict()})


def merge_reports(reports: list[CovarianceReport], slope_tolerance: float,
                  reference_slope: float = LOG2) -> CovarianceReport:
    """Combine single-n reports of one lemma into a sweep with slope verdicts."""
    if not reports:
        raise RangeError("no reports to merge")
    names = reports[0].items.keys()
    merged = {}
    for name in names:
        deviations, pairs = {}, {}
        for report in reports:
            deviations.update(report.items[name].deviations)
            pairs.update(report.items[name].pairs)
        ns = sorted(deviations)
        slope, threshold, verdict = slope_verdict(ns, [deviations[n] for n in ns],
                                                  reference_slope, slope_tolerance)
        merged[name] = ItemReport(deviations=deviations, pairs=pairs, slope=slope,
                                  threshold=threshold, verdict=verdict)
    overall = overall_verdict(r.verdict for r in merged.values())
    details = {"per_n": [r.details for r in reports]}
    return CovarianceReport(lemma=reports[0].lemma, items=merged, verdict=overall, details=details)


def rho_truncation_gain(p: StepProfile, grid: GridSize, k0: int) -> tuple[float, float]:
    """
    Over pairs with d^N >= 2^sqrt(k0): min of rho_{N,0} - rho_{N,k0}, and g(k0).

    g(k0) = sqrt(k0) * min sigma^2 - 1.
    """
    full, trunc = cov_mibrw(p, grid, 0), cov_mibrw(p, grid, k0)
    x, y = np.divmod(np.arange(grid.size), grid.N)
    vx, vy = x[:, None], y[:, None]
    r1, r2 = torus_offsets_array(vx, vy, x[None, :], y[None, :], grid.N)
    far = np.hypot(r1, r2) >= 2 ** math.sqrt(k0)
    gain = full.rho_pairs((vx, vy), (x[None, :], y[None, :])) - trunc.rho_pairs((vx, vy), (x[None, :], y[None, :]))
    g = math.sqrt(k0) * min(p.sigmas) ** 2 - 1
    return float(gain[far].min()) if far.any() else math.inf, g


def rho_near_sup(p: StepProfile, grid: GridSize, k0: int) -> float:
    """sup of rho_{N,k0}(v, w) over pairs with d^N <= 2^sqrt(k0)."""
    trunc = cov_mibrw(p, grid, k0)
    x, y = np.divmod(np.arange(grid.size), grid.N)
    r1, r2 = torus_offsets_array(x[:, None], y[:, None], x[None, :], y[None, :], grid.N)
    near = np.hypot(r1, r2) <= 2 ** math.sqrt(k0)
    rho = trunc.rho_pairs((x[:, None], y[:, None]), (x[None, :], y[None, :]))
    return float(rho[near].max())
