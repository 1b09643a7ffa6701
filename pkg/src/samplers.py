"""
Field Samplers

Exact seeded samplers for the DGFF, the scale-inhomogeneous DGFF psi, the
inhomogeneous branching random walk (IBRW), the modified walk on the torus
(MIBRW / truncated TMIBRW) and fields coupled with one shared Gaussian.

Every sampler has a single-sample form and a block form used by the Monte Carlo
experiments. Randomness comes from Philox streams keyed by (seed, tag, ...), so
a given block or NoiseTree level is reproducible regardless of scheduling.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Literal

import numpy as np
import scipy.linalg

from src.config import get_settings
from src.errors import NegativeCouplingError, RangeError, SizeLimitError
from src.green import Rectangle, green_matrix, psi_operator
from src.lattice import GridSize
from src.profile import SQRT_LOG2, ComparisonProfile, StepProfile
from src.utils import STREAM_TAGS, make_rng, replicate_blocks, thread_map

logger = logging.getLogger(__name__)

FieldKind = Literal["dgff", "psi", "ibrw", "mibrw", "tmibrw", "coupled"]

# Key separating block streams from single-sample streams
BLOCK_KEY = 1


@dataclass(eq=False)
class FieldSample:
    """One realization on V_N, indexed values[x, y], with its provenance."""

    kind: FieldKind
    grid: GridSize
    values: np.ndarray
    seed: int
    profile: StepProfile | ComparisonProfile | None = None
    levels: np.ndarray | None = None  # (n + 1, N, N) level contributions, MIBRW only
    extra: dict[str, Any] = field(default_factory=dict)

    def header(self) -> dict[str, Any]:
        profile = self.profile.to_dict() if self.profile is not None else None
        return {"kind": self.kind, "n": self.grid.n, "seed": self.seed, "profile": profile,
                "extra": {k: v for k, v in self.extra.items() if np.isscalar(v)}}


def _sigma_levels(profile: StepProfile | ComparisonProfile, n: int) -> np.ndarray:
    """sigma((n - k)/n) for levels k = 0..n."""
    return np.array([profile.sigma_at((n - k) / n) for k in range(n + 1)])


def _dense_limit(grid: GridSize) -> None:
    limit = get_settings().max_dense_side
    if grid.N > limit:
        raise SizeLimitError(f"N={grid.N} exceeds the dense limit {limit}")


@lru_cache(maxsize=16)
def _dgff_factor(n: int) -> np.ndarray:
    """Lower Cholesky factor of G on the interior of V_N, embedded into V_N rows."""
    grid = GridSize(n)
    green = green_matrix(Rectangle.box(grid))
    lower = scipy.linalg.cholesky(green.values, lower=True)
    out = np.zeros((grid.size, lower.shape[1]))
    out[green.interior] = lower
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def _psi_factor(p: StepProfile, n: int) -> np.ndarray:
    """A L: maps interior standard normals to psi."""
    return np.asarray(psi_operator(p, n) @ _dgff_factor(n))


def _gaussian_block(factor: np.ndarray, N: int, rng: np.random.Generator, size: int) -> np.ndarray:
    z = rng.standard_normal((factor.shape[1], size))
    return (factor @ z).T.reshape(size, N, N)


def sample_dgff(grid: GridSize, seed: int) -> FieldSample:
    """
    One DGFF on V_N with Dirichlet boundary.

    Raises:
        SizeLimitError: If N exceeds the dense limit
    """
    grid.require_sampling()
    _dense_limit(grid)
    if grid.N <= 2:
        return FieldSample("dgff", grid, np.zeros((grid.N, grid.N)), seed)
    rng = make_rng(seed, STREAM_TAGS["dgff"])
    values = _gaussian_block(_dgff_factor(grid.n), grid.N, rng, 1)[0]
    return FieldSample("dgff", grid, values, seed)


def sample_psi(p: StepProfile, grid: GridSize, seed: int) -> FieldSample:
    """
    One scale-inhomogeneous DGFF psi = A phi from a single DGFF draw.

    The DGFF used is the one sample_dgff returns for the same seed.
    """
    phi = sample_dgff(grid, seed)
    if grid.N <= 2:
        return FieldSample("psi", grid, phi.values.copy(), seed, p)
    A = psi_operator(p, grid.n)
    values = np.asarray(A @ phi.values.reshape(-1)).reshape(grid.N, grid.N)
    return FieldSample("psi", grid, values, seed, p, extra={"phi": phi.values})


def _ibrw_level_weights(tilde, n: int, kappa: int) -> np.ndarray:
    """Per-level standard deviations of the (embedded) IBRW on the base grid."""
    total = n + kappa
    return SQRT_LOG2 * np.array([tilde.sigma_at((total - k) / total) for k in range(total + 1)])


def _ibrw_from_noise(weights: np.ndarray, n: int, kappa: int, t: int, draw) -> np.ndarray:
    """
    Sum the IBRW levels k = n + kappa - t .. n + kappa on the base grid.

    For kappa > 0 the field is R evaluated at the embedded points 2^kappa v of
    the 2^kappa N grid: levels below kappa are private to each v and level
    kappa + j uses the BD_j partition of the base grid.
    """
    total = n + kappa
    N = 1 << n
    out = None
    for k in range(total - t, total + 1):
        j = max(k - kappa, 0)
        noise = draw(k, N >> j)
        expanded = np.repeat(np.repeat(noise, 1 << j, axis=-2), 1 << j, axis=-1)
        out = weights[k] * expanded if out is None else out + weights[k] * expanded
    return out


def sample_ibrw(tilde: StepProfile | ComparisonProfile, grid: GridSize, t: int | None = None,
                seed: int = 0, kappa: int = 0) -> FieldSample:
    """
    IBRW R^N(t) = sum_{k=n-t}^{n} sqrt(log 2) sigma((n-k)/n) a_{k, BD_k(z)}.

    Args:
        tilde: Profile evaluated at (n - k)/n (any step profile)
        grid: Base grid
        t: Number of levels above the top one (default: all)
        seed: Experiment seed
        kappa: Embedding shift; kappa > 0 samples R^{2^kappa N} at 2^kappa v

    Raises:
        RangeError: If t is outside [0, n + kappa]
    """
    grid.require_sampling()
    total = grid.n + kappa
    t = total if t is None else t
    if not 0 <= t <= total:
        raise RangeError(f"t={t} outside [0, {total}]")
    weights = _ibrw_level_weights(tilde, grid.n, kappa)

    def draw(k: int, side: int) -> np.ndarray:
        return make_rng(seed, STREAM_TAGS["ibrw"], k).standard_normal((side, side))

    values = _ibrw_from_noise(weights, grid.n, kappa, t, draw)
    return FieldSample("ibrw", grid, values, seed, tilde, extra={"kappa": kappa, "t": t})


def torus_window_sum(noise: np.ndarray, side: int) -> np.ndarray:
    """
    Sum of noise over the torus boxes of the given side whose upper-right corner is z.

    out[..., x, y] = sum_{0 <= i, j < side} noise[..., (x - i) % N, (y - j) % N],
    evaluated with cumulative sums along each axis.
    """
    out = noise
    for axis in (-2, -1):
        if side > 1:
            tail = np.take(out, np.arange(-(side - 1), 0), axis=axis)
            out = np.concatenate([tail, out], axis=axis)
        csum = np.cumsum(out, axis=axis)
        shape = list(csum.shape)
        shape[axis] = 1
        csum = np.concatenate([np.zeros(shape), csum], axis=axis)
        length = csum.shape[axis]
        out = (np.take(csum, np.arange(side, length), axis=axis)
               - np.take(csum, np.arange(0, length - side), axis=axis))
    return out


def mibrw_levels_from_noise(p: StepProfile, n: int, k0: int, draw) -> np.ndarray:
    """
    Level contributions 2^{-k} sigma((n-k)/n) sum_{B in B_k^N(z)} b_{k,B}.

    Returns an array (..., n + 1, N, N) with zeros for the removed levels k < k0.
    """
    sigmas = _sigma_levels(p, n)
    parts = []
    for k in range(n + 1):
        noise = draw(k)
        if k < k0:
            parts.append(np.zeros_like(noise))
            continue
        parts.append(sigmas[k] * 2.0 ** (-k) * torus_window_sum(noise, 1 << k))
    return np.stack(parts, axis=-3)


def sample_mibrw(p: StepProfile, grid: GridSize, k0: int = 0, seed: int = 0) -> FieldSample:
    """
    MIBRW (k0 = 0) or truncated TMIBRW S^{N,k0} on V_N.

    One standard normal per torus-canonical box and level; the per-level
    contributions are kept on the sample for path events.

    Raises:
        RangeError: If k0 is outside [0, n]
    """
    grid.require_sampling()
    if not 0 <= k0 <= grid.n:
        raise RangeError(f"k0={k0} outside [0, {grid.n}]")
    N = grid.N

    def draw(k: int) -> np.ndarray:
        return make_rng(seed, STREAM_TAGS["mibrw"], k).standard_normal((N, N))

    levels = mibrw_levels_from_noise(p, grid.n, k0, draw)
    kind = "tmibrw" if k0 > 0 else "mibrw"
    return FieldSample(kind, grid, levels.sum(axis=0), seed, p, levels=levels, extra={"k0": k0})


def sample_coupled(base: FieldSample, a: np.ndarray, seed: int) -> FieldSample:
    """
    base + a_v X with one standard normal X shared by all vertices.

    Raises:
        NegativeCouplingError: If any a_v < 0
    """
    a = np.asarray(a, dtype=float).reshape(base.values.shape)
    if (a < 0).any():
        bad = np.argwhere(a < 0)[0]
        raise NegativeCouplingError(f"a is negative at {tuple(int(i) for i in bad)}; kappa too small")
    x = float(make_rng(seed, STREAM_TAGS["coupled"]).standard_normal())
    return FieldSample("coupled", base.grid, base.values + a * x, seed, base.profile,
                       extra={"X": x, "base_kind": base.kind})


@dataclass(frozen=True)
class FieldSpec:
    """Parameters of a field kind for block sampling."""

    kind: Literal["dgff", "psi", "ibrw", "mibrw", "tmibrw"]
    n: int
    profile: StepProfile | ComparisonProfile | None = None
    k0: int = 0
    kappa: int = 0
    t: int | None = None

    @property
    def grid(self) -> GridSize:
        return GridSize(self.n)

    @property
    def s_scale(self) -> bool:
        """True for walks on the S-scale (no sqrt(log 2) factor)."""
        return self.kind in ("mibrw", "tmibrw")

    def validate(self) -> None:
        self.grid.require_sampling()
        if self.kind in ("dgff", "psi"):
            _dense_limit(self.grid)
        if self.kind != "dgff" and self.profile is None:
            raise RangeError(f"field kind '{self.kind}' needs a profile")
        if self.kind in ("mibrw", "tmibrw") and not 0 <= self.k0 <= self.n:
            raise RangeError(f"k0={self.k0} outside [0, {self.n}]")


def sample_block(spec: FieldSpec, seed: int, block: int, size: int,
                 keep_levels: bool = False) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """
    `size` independent replicates, shape (size, N, N), for replicate block `block`.

    With keep_levels (MIBRW kinds) also returns the (size, n + 1, N, N) levels.
    """
    N, n = spec.grid.N, spec.n
    tag = STREAM_TAGS[spec.kind]
    if spec.kind in ("dgff", "psi"):
        if N <= 2:
            return np.zeros((size, N, N))
        rng = make_rng(seed, tag, BLOCK_KEY, block)
        factor = _dgff_factor(n) if spec.kind == "dgff" else _psi_factor(spec.profile, n)
        return _gaussian_block(factor, N, rng, size)
    if spec.kind == "ibrw":
        total = n + spec.kappa
        t = total if spec.t is None else spec.t
        weights = _ibrw_level_weights(spec.profile, n, spec.kappa)

        def draw_ibrw(k: int, side: int) -> np.ndarray:
            return make_rng(seed, tag, BLOCK_KEY, block, k).standard_normal((size, side, side))

        return _ibrw_from_noise(weights, n, spec.kappa, t, draw_ibrw)

    def draw_mibrw(k: int) -> np.ndarray:
        return make_rng(seed, tag, BLOCK_KEY, block, k).standard_normal((size, N, N))

    levels = mibrw_levels_from_noise(spec.profile, n, spec.k0, draw_mibrw)
    values = levels.sum(axis=1)
    return (values, levels) if keep_levels else values


def iter_blocks(spec: FieldSpec, replicates: int, seed: int, keep_levels: bool = False
                ) -> Iterator[np.ndarray | tuple[np.ndarray, np.ndarray]]:
    """Yield replicate blocks in order."""
    spec.validate()
    for block, size in replicate_blocks(replicates):
        yield sample_block(spec, seed, block, size, keep_levels)


def map_blocks(spec: FieldSpec, replicates: int, seed: int, reducer, threads: int = 1,
               keep_levels: bool = False) -> list:
    """
    Apply `reducer` to every replicate block, on up to `threads` workers.

    Results are returned in block order, independent of the worker count.
    """
    spec.validate()
    blocks = replicate_blocks(replicates)
    logger.info("sampling %s n=%d: %d replicates in %d blocks", spec.kind, spec.n,
                replicates, len(blocks))

    def work(item: tuple[int, int]):
        block, size = item
        return reducer(sample_block(spec, seed, block, size, keep_levels))

    return thread_map(work, blocks, threads)


def sample_field(spec: FieldSpec, seed: int) -> FieldSample:
    """Single-sample dispatcher used by the CLI."""
    spec.validate()
    grid = spec.grid
    if spec.kind == "dgff":
        return sample_dgff(grid, seed)
    if spec.kind == "psi":
        return sample_psi(spec.profile, grid, seed)
    if spec.kind == "ibrw":
        return sample_ibrw(spec.profile, grid, spec.t, seed, spec.kappa)
    return sample_mibrw(spec.profile, grid, spec.k0 if spec.kind == "tmibrw" else 0, seed)


def ibrw_variance(tilde, n: int, kappa: int = 0) -> float:
    """Var R at any vertex: log 2 * sum of sigma-tilde^2 over all n + kappa + 1 levels."""
    weights = _ibrw_level_weights(tilde, n, kappa)
    return float(np.sum(weights**2))


def mibrw_level_variances(p: StepProfile, n: int) -> np.ndarray:
    """Variance of each MIBRW level at a vertex: sigma((n-k)/n)^2, k = 0..n."""
    return _sigma_levels(p, n) ** 2


def gaussian_kurtosis_bound(replicates: int) -> float:
    """Three standard errors of the sample excess kurtosis of a Gaussian."""
    return 3 * math.sqrt(24.0 / replicates)
