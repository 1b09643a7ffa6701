"""
Green Kernel

Dirichlet Green functions of simple random walk on rectangles (normalized by
pi/2), exit distributions of boxes, and the harmonic operators that express
conditional expectations of the DGFF given the field outside a box.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.config import get_settings
from src.errors import RangeError, SingularSystemError, SizeLimitError
from src.lattice import GridSize, ScaleBox, Vertex, scale_box
from src.profile import StepProfile
from src.utils import make_rng, STREAM_TAGS

logger = logging.getLogger(__name__)

GREEN_NORMALIZATION = math.pi / 2

# Right-hand sides solved per batch when building scale operators
SOLVE_BATCH = 512


@dataclass(frozen=True)
class Rectangle:
    """Vertices x0 <= x < x0 + width, y0 <= y < y0 + height; boundary is the outer ring."""

    x0: int
    y0: int
    width: int
    height: int

    @classmethod
    def box(cls, grid: GridSize) -> Rectangle:
        return cls(0, 0, grid.N, grid.N)

    @classmethod
    def from_extent(cls, extent: tuple[int, int, int, int]) -> Rectangle:
        x0, x1, y0, y1 = extent
        return cls(x0, y0, x1 - x0 + 1, y1 - y0 + 1)

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def interior_shape(self) -> tuple[int, int]:
        return max(0, self.width - 2), max(0, self.height - 2)

    def index(self, v: Vertex) -> int:
        return (v.x - self.x0) * self.height + (v.y - self.y0)

    def contains(self, v: Vertex) -> bool:
        return self.x0 <= v.x < self.x0 + self.width and self.y0 <= v.y < self.y0 + self.height

    def is_interior(self, v: Vertex) -> bool:
        return (self.x0 < v.x < self.x0 + self.width - 1
                and self.y0 < v.y < self.y0 + self.height - 1)

    def interior_indices(self) -> np.ndarray:
        """Domain indices of interior vertices, in interior (x-major) order."""
        w, h = self.interior_shape
        xs = np.repeat(np.arange(1, w + 1), h)
        ys = np.tile(np.arange(1, h + 1), w)
        return xs * self.height + ys


def interior_system(width: int, height: int) -> sp.csc_matrix:
    """
    I - P for simple random walk killed on leaving a width x height block.

    5-point stencil in x-major ordering, scaled by 1/4.
    """
    def path(m: int) -> sp.spmatrix:
        return sp.diags([np.ones(m - 1), np.ones(m - 1)], [-1, 1], shape=(m, m))

    adjacency = sp.kron(path(width), sp.identity(height)) + sp.kron(sp.identity(width), path(height))
    return (sp.identity(width * height) - 0.25 * adjacency).tocsc()


@lru_cache(maxsize=256)
def _factor(width: int, height: int):
    logger.debug("factorizing %dx%d Dirichlet block", width, height)
    try:
        return splu(interior_system(width, height))
    except RuntimeError as exc:
        raise SingularSystemError(f"{width}x{height} block: {exc}") from exc


@dataclass(frozen=True, eq=False)
class GreenMatrix:
    """(pi/2)-normalized Green function of a rectangle, on its interior vertices."""

    domain: Rectangle
    values: np.ndarray
    interior: np.ndarray = field(repr=False)
    normalization: float = GREEN_NORMALIZATION

    def full(self) -> np.ndarray:
        """Matrix over all domain vertices, zero on boundary rows/columns."""
        out = np.zeros((self.domain.size, self.domain.size))
        out[np.ix_(self.interior, self.interior)] = self.values
        return out

    def __call__(self, u: Vertex, v: Vertex) -> float:
        if not (self.domain.is_interior(u) and self.domain.is_interior(v)):
            return 0.0
        h = self.domain.height - 2
        iu = (u.x - self.domain.x0 - 1) * h + (u.y - self.domain.y0 - 1)
        iv = (v.x - self.domain.x0 - 1) * h + (v.y - self.domain.y0 - 1)
        return float(self.values[iu, iv])


def _check_size(width: int, height: int) -> None:
    limit = get_settings().max_dense_side
    if max(width, height) > limit:
        raise SizeLimitError(f"domain {width}x{height} exceeds the dense limit {limit}")


@lru_cache(maxsize=32)
def _green_values(width: int, height: int) -> np.ndarray:
    w, h = width - 2, height - 2
    settings = get_settings()
    path = None
    if settings.cache_dir is not None:
        path = settings.cache_dir / "green" / f"{width}x{height}.npy"
        if path.exists():
            logger.debug("green cache hit %s", path)
            return np.load(path)
    dense = interior_system(w, h).toarray()
    try:
        factor = scipy.linalg.cho_factor(dense, lower=True)
        values = GREEN_NORMALIZATION * scipy.linalg.cho_solve(factor, np.eye(w * h))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"green matrix of {width}x{height}: {exc}") from exc
    values = (values + values.T) / 2
    values.setflags(write=False)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, values)
    return values


def green_matrix(domain: Rectangle) -> GreenMatrix:
    """
    Green function G = (pi/2) (I - P)^{-1} of the rectangle's interior.

    Time Complexity: O((w h)^3) dense Cholesky, cached per shape

    Args:
        domain: Rectangle with at least one interior vertex

    Returns:
        GreenMatrix over the interior vertices

    Raises:
        RangeError: If the rectangle has no interior
        SizeLimitError: If it exceeds the dense limit
    """
    if domain.width < 3 or domain.height < 3:
        raise RangeError("domain needs at least one interior vertex")
    _check_size(domain.width, domain.height)
    return GreenMatrix(domain, _green_values(domain.width, domain.height), domain.interior_indices())


def exit_rows(extent: tuple[int, int, int, int], sources: list[Vertex]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Exit distributions of simple random walk from interior sources of a box.

    Args:
        extent: Inclusive (x0, x1, y0, y1) of the box; the walk is killed on its ring
        sources: Vertices strictly inside the box

    Returns:
        (ring_x, ring_y, probs) with probs of shape (len(ring), len(sources))
    """
    x0, x1, y0, y1 = extent
    w, h = x1 - x0 - 1, y1 - y0 - 1
    lu = _factor(w, h)
    rhs = np.zeros((w * h, len(sources)))
    for col, v in enumerate(sources):
        rhs[(v.x - x0 - 1) * h + (v.y - y0 - 1), col] = 1.0
    visits = lu.solve(rhs).reshape(w, h, len(sources))
    inner_x, inner_y = np.arange(x0 + 1, x1), np.arange(y0 + 1, y1)
    ring_x = np.concatenate([np.full(h, x0), np.full(h, x1), inner_x, inner_x])
    ring_y = np.concatenate([inner_y, inner_y, np.full(w, y0), np.full(w, y1)])
    probs = np.concatenate(
        [visits[0], visits[-1], visits[:, 0], visits[:, -1]], axis=0
    ) / 4.0
    return ring_x, ring_y, probs


@dataclass(frozen=True, eq=False)
class HarmonicOperator:
    """Conditional expectation given the field outside a box, as a sparse matrix."""

    box: ScaleBox
    domain: Rectangle
    matrix: sp.csr_matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Apply to a field given as an array over the domain (any leading shape)."""
        flat = values.reshape(-1, self.domain.size)
        return (self.matrix @ flat.T).T.reshape(values.shape)


def harmonic_operator(box: ScaleBox, domain: Rectangle) -> HarmonicOperator:
    """
    Harmonic extension from the ring of `box` into its interior.

    Rows for v inside the box are exit distributions on the ring; every other
    row is the point mass at v.
    """
    x0, x1, y0, y1 = box.extent
    if not (domain.contains(Vertex(x0, y0)) and domain.contains(Vertex(x1, y1))):
        raise RangeError("box must lie inside the domain")
    rows, cols, vals = [], [], []
    inner = box.interior_extent()
    sources = []
    if inner is not None:
        sources = [Vertex(x, y) for x in range(inner[0], inner[1] + 1)
                   for y in range(inner[2], inner[3] + 1)]
        ring_x, ring_y, probs = exit_rows(box.extent, sources)
        ring_idx = (ring_x - domain.x0) * domain.height + (ring_y - domain.y0)
        for col, v in enumerate(sources):
            rows.append(np.full(len(ring_idx), domain.index(v)))
            cols.append(ring_idx)
            vals.append(probs[:, col])
    inside = {domain.index(v) for v in sources}
    others = np.array([i for i in range(domain.size) if i not in inside], dtype=int)
    rows.append(others)
    cols.append(others)
    vals.append(np.ones(len(others)))
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(domain.size, domain.size),
    )
    return HarmonicOperator(box, domain, matrix)


def gibbs_markov_gap(box: ScaleBox, domain: Rectangle) -> dict[str, float]:
    """
    Exact Gibbs-Markov check for one box.

    With H the harmonic operator of `box`, the residual covariance
    (I - H) G (I - H)^T restricted to the box interior must equal the box's own
    Green matrix, and H G (I - H)^T must vanish.

    Returns:
        {"decomposition": max deviation from G_box, "orthogonality": max |H G (I - H)^T|}

    Raises:
        RangeError: If the box has no interior or leaves the domain
    """
    inner = box.interior_extent()
    if inner is None:
        raise RangeError("box has no interior vertices")
    H = harmonic_operator(box, domain).matrix.toarray()
    G = green_matrix(domain).full()
    rest = np.eye(domain.size) - H
    residual = rest @ G @ rest.T
    cross = H @ G @ rest.T
    sources = [domain.index(Vertex(x, y)) for x in range(inner[0], inner[1] + 1)
               for y in range(inner[2], inner[3] + 1)]
    local = green_matrix(Rectangle.from_extent(box.extent)).values
    gap = float(np.max(np.abs(residual[np.ix_(sources, sources)] - local)))
    outside = np.setdiff1d(np.arange(domain.size), sources)
    leak = float(np.max(np.abs(residual[np.ix_(outside, outside)]))) if outside.size else 0.0
    return {"decomposition": max(gap, leak), "orthogonality": float(np.max(np.abs(cross)))}


@lru_cache(maxsize=64)
def scale_operator(n: int, scale: float) -> sp.csr_matrix:
    """
    Per-vertex harmonic map at one scale: row v is the harmonic row of [v]_scale at v.

    Applied to a DGFF this returns the field of conditional means phi_v(scale).
    Sources are grouped by box shape so each Dirichlet block is factorized once.
    """
    grid = GridSize(n)
    N = grid.N
    _check_size(N, N)
    groups: dict[tuple[int, int], list[tuple[Vertex, tuple[int, int, int, int]]]] = {}
    rows, cols, vals = [], [], []
    for v in grid.vertices():
        box = scale_box(v, scale, grid)
        if box.in_interior(v):
            key = (box.width - 2, box.height - 2)
            groups.setdefault(key, []).append((v, box.extent))
        else:
            rows.append(np.array([grid.index(v)]))
            cols.append(np.array([grid.index(v)]))
            vals.append(np.ones(1))
    for (w, h), members in groups.items():
        for start in range(0, len(members), SOLVE_BATCH):
            batch = members[start:start + SOLVE_BATCH]
            x0, x1, y0, y1 = 0, w + 1, 0, h + 1
            local = [Vertex(v.x - ext[0], v.y - ext[2]) for v, ext in batch]
            ring_x, ring_y, probs = exit_rows((x0, x1, y0, y1), local)
            for col, (v, ext) in enumerate(batch):
                rows.append(np.full(len(ring_x), grid.index(v)))
                cols.append((ring_x + ext[0]) * N + (ring_y + ext[2]))
                vals.append(probs[:, col])
    logger.debug("scale operator n=%d scale=%.4g: %d box shapes", n, scale, len(groups))
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    )
    matrix.sum_duplicates()
    return matrix


def increment_operator(p: StepProfile, grid: GridSize, i: int) -> sp.csr_matrix:
    """H_{lambda_i} - H_{lambda_{i-1}}: maps phi to the increments d phi_v(lambda_i)."""
    if not 1 <= i <= p.M:
        raise RangeError(f"scale index {i} outside [1, {p.M}]")
    lower = 0.0 if i == 1 else p.lambdas[i - 2]
    return (scale_operator(grid.n, p.lambdas[i - 1]) - scale_operator(grid.n, lower)).tocsr()


@lru_cache(maxsize=16)
def psi_operator(p: StepProfile, n: int) -> sp.csr_matrix:
    """
    The linear map A = sum_i sigma_i (H_{lambda_i} - H_{lambda_{i-1}}) with psi = A phi.

    Raises:
        SizeLimitError: If N exceeds the dense limit
    """
    grid = GridSize(n)
    _check_size(grid.N, grid.N)
    total = sp.csr_matrix((grid.size, grid.size))
    for i, sigma in enumerate(p.sigmas, start=1):
        total = total + sigma * increment_operator(p, grid, i)
    return total.tocsr()


def green_monte_carlo(domain: Rectangle, u: Vertex, v: Vertex, walks: int, seed: int) -> tuple[float, float]:
    """
    Estimate G(u, v) by counting visits of simulated walks started at u.

    Walkers move in lockstep until all have hit the boundary.

    Returns:
        (estimate, standard error), both including the pi/2 normalization
    """
    if not domain.is_interior(u):
        return 0.0, 0.0
    rng = make_rng(seed, STREAM_TAGS["walks"])
    x = np.full(walks, u.x)
    y = np.full(walks, u.y)
    visits = np.zeros(walks)
    alive = np.ones(walks, dtype=bool)
    steps = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)])
    x_lo, x_hi = domain.x0, domain.x0 + domain.width - 1
    y_lo, y_hi = domain.y0, domain.y0 + domain.height - 1
    while alive.any():
        visits[alive] += (x[alive] == v.x) & (y[alive] == v.y)
        move = steps[rng.integers(0, 4, size=int(alive.sum()))]
        x[alive] += move[:, 0]
        y[alive] += move[:, 1]
        alive &= (x > x_lo) & (x < x_hi) & (y > y_lo) & (y < y_hi)
    scaled = GREEN_NORMALIZATION * visits
    return float(scaled.mean()), float(scaled.std(ddof=1) / math.sqrt(walks))
