"""
Lattice Geometry

Vertices of the box V_N = {0, ..., N-1}^2 with N = 2^n, dyadic boxes, torus
distances and the box-sharing combinatorics the branching-walk covariances
are built from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from src.errors import DomainError, RangeError

BoxFamily = Literal["BD", "B_N"]


@dataclass(frozen=True)
class GridSize:
    """Side length N = 2^n of the box V_N."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise RangeError(f"grid exponent must be non-negative, got {self.n}")

    @property
    def N(self) -> int:
        return 1 << self.n

    @property
    def size(self) -> int:
        return self.N * self.N

    def require_sampling(self) -> None:
        if self.n < 1:
            raise RangeError("sampling needs n >= 1")

    def contains(self, v: Vertex) -> bool:
        return 0 <= v.x < self.N and 0 <= v.y < self.N

    def is_interior(self, v: Vertex) -> bool:
        """v in V_N^o, i.e. not on the outer ring."""
        return 0 < v.x < self.N - 1 and 0 < v.y < self.N - 1

    def index(self, v: Vertex) -> int:
        """Row-major index of v (x major)."""
        return v.x * self.N + v.y

    def vertex(self, index: int) -> Vertex:
        return Vertex(*divmod(int(index), self.N))

    def vertices(self) -> list[Vertex]:
        return [Vertex(x, y) for x in range(self.N) for y in range(self.N)]

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros((self.N, self.N), dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    def delta_interior(self, delta: float) -> list[Vertex]:
        """V_N^delta: vertices at distance > delta*N from the complement of V_N."""
        if not 0 < delta < 0.5:
            raise RangeError("delta must lie in (0, 1/2)")
        lo, hi = delta * self.N, (1 - delta) * self.N
        coords = [c for c in range(self.N) if lo < c < hi]
        return [Vertex(x, y) for x in coords for y in coords]


@dataclass(frozen=True, order=True)
class Vertex:
    """Lattice point (x, y)."""

    x: int
    y: int

    def shifted(self, dx: int, dy: int) -> Vertex:
        return Vertex(self.x + dx, self.y + dy)

    def as_tuple(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass(frozen=True)
class DyadicBoxId:
    """Square of side 2^k with lower-left corner `anchor`."""

    level: int
    anchor: tuple[int, int]
    family: BoxFamily

    def contains(self, v: Vertex, grid: GridSize) -> bool:
        side = 1 << self.level
        if self.family == "BD":
            return (self.anchor[0] <= v.x < self.anchor[0] + side
                    and self.anchor[1] <= v.y < self.anchor[1] + side)
        dx = (v.x - self.anchor[0]) % grid.N
        dy = (v.y - self.anchor[1]) % grid.N
        return dx < side and dy < side


@dataclass(frozen=True)
class ScaleBox:
    """The box [v]_lambda clipped to V_N; extent is inclusive (x0, x1, y0, y1)."""

    center: Vertex
    scale: float
    side: int
    extent: tuple[int, int, int, int]

    @property
    def width(self) -> int:
        return self.extent[1] - self.extent[0] + 1

    @property
    def height(self) -> int:
        return self.extent[3] - self.extent[2] + 1

    def interior_extent(self) -> tuple[int, int, int, int] | None:
        """Extent of the box interior (outer ring removed), or None if empty."""
        x0, x1, y0, y1 = self.extent
        if x1 - x0 < 2 or y1 - y0 < 2:
            return None
        return (x0 + 1, x1 - 1, y0 + 1, y1 - 1)

    def in_interior(self, v: Vertex) -> bool:
        inner = self.interior_extent()
        return inner is not None and inner[0] <= v.x <= inner[1] and inner[2] <= v.y <= inner[3]

    def intersects(self, other: ScaleBox) -> bool:
        a, b = self.extent, other.extent
        return a[0] <= b[1] and b[0] <= a[1] and a[2] <= b[3] and b[2] <= a[3]


def log_plus(x: float) -> float:
    """
    Positive part of log2.

    Args:
        x: Positive real

    Returns:
        max(0, log2 x)

    Raises:
        DomainError: If x <= 0
    """
    if not x > 0:
        raise DomainError(f"log_plus needs x > 0, got {x}")
    return max(0.0, math.log2(x))


def torus_offsets(v: Vertex, w: Vertex, grid: GridSize) -> tuple[int, int]:
    """Per-coordinate torus offsets r_i = min(|v_i - w_i|, N - |v_i - w_i|)."""
    N = grid.N
    d1 = abs(v.x - w.x) % N
    d2 = abs(v.y - w.y) % N
    return min(d1, N - d1), min(d2, N - d2)


def torus_offsets_array(vx, vy, wx, wy, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized torus_offsets over coordinate arrays."""
    d1 = np.abs(np.asarray(vx) - np.asarray(wx)) % N
    d2 = np.abs(np.asarray(vy) - np.asarray(wy)) % N
    return np.minimum(d1, N - d1), np.minimum(d2, N - d2)


def torus_distance(v: Vertex, w: Vertex, grid: GridSize,
                   metric: Literal["euclidean", "max"] = "euclidean") -> float:
    """
    Distance on the torus induced by V_N.

    Time Complexity: O(1)

    Args:
        v, w: Vertices of V_N
        grid: Grid size
        metric: "euclidean" (d^N) or "max" (d_inf^N)

    Returns:
        Non-negative distance
    """
    r1, r2 = torus_offsets(v, w, grid)
    if metric == "max":
        return float(max(r1, r2))
    if metric == "euclidean":
        return math.hypot(r1, r2)
    raise DomainError(f"unknown metric '{metric}'")


def shared_scale_count(v: Vertex, w: Vertex, grid: GridSize) -> int:
    """
    Number of scales r(v, w) = n - ceil(log2(d_inf + 1)) shared by v and w.

    ceil(log2(d + 1)) equals the bit length of the integer d.
    """
    d_inf = max(torus_offsets(v, w, grid))
    return grid.n - int(d_inf).bit_length()


def _axis_common(r: np.ndarray | int, side: int, N: int):
    # boxes of one axis containing both points, with wrap for side = N
    return np.maximum(0, side - r) + np.maximum(0, side - (N - r))


def common_box_count(v: Vertex, w: Vertex, k: int, grid: GridSize) -> int:
    """
    Number of torus-distinct boxes of side 2^k containing both v and w.

    For k < n this is max(0, 2^k - r1) * max(0, 2^k - r2). At k = n a box
    wraps around the whole torus and contains every vertex, so each axis
    contributes N.

    Args:
        v, w: Vertices of V_N
        k: Level in [0, n]
        grid: Grid size

    Returns:
        Count of shared boxes

    Raises:
        RangeError: If k is outside [0, n]
    """
    if not 0 <= k <= grid.n:
        raise RangeError(f"level {k} outside [0, {grid.n}]")
    r1, r2 = torus_offsets(v, w, grid)
    side = 1 << k
    return int(_axis_common(r1, side, grid.N)) * int(_axis_common(r2, side, grid.N))


def common_box_count_array(r1: np.ndarray, r2: np.ndarray, k: int, N: int) -> np.ndarray:
    """Vectorized common_box_count from precomputed torus offsets."""
    side = 1 << k
    return _axis_common(r1, side, N) * _axis_common(r2, side, N)


def bd_box(v: Vertex, k: int) -> DyadicBoxId:
    """The unique box of the disjoint partition BD_k containing v."""
    return DyadicBoxId(k, ((v.x >> k) << k, (v.y >> k) << k), "BD")


def torus_boxes(v: Vertex, k: int, grid: GridSize) -> list[DyadicBoxId]:
    """
    The 2^{2k} boxes of B_k^N containing v, anchors canonicalized to V_N.

    Time Complexity: O(4^k)
    """
    if not 0 <= k <= grid.n:
        raise RangeError(f"level {k} outside [0, {grid.n}]")
    N, side = grid.N, 1 << k
    return [DyadicBoxId(k, ((v.x - i) % N, (v.y - j) % N), "B_N")
            for i in range(side) for j in range(side)]


def box_side(grid: GridSize, scale: float) -> int:
    """Side of [v]_lambda: max(1, round(N^(1 - lambda)))."""
    return max(1, int(round(grid.N ** (1.0 - scale))))


def scale_box(v: Vertex, scale: float, grid: GridSize) -> ScaleBox:
    """
    The box [v]_lambda of side N^(1-lambda) centred at v, clipped to V_N.

    [v]_0 is V_N itself; otherwise the integer points of
    [v - s/2, v + s/2]^2 inside V_N.
    """
    if not 0.0 <= scale <= 1.0:
        raise RangeError(f"scale {scale} outside [0, 1]")
    if not grid.contains(v):
        raise RangeError(f"{v} not in V_{grid.N}")
    N = grid.N
    side = box_side(grid, scale)
    if scale == 0.0:
        return ScaleBox(v, scale, side, (0, N - 1, 0, N - 1))
    half = side / 2
    x0, x1 = max(0, math.ceil(v.x - half)), min(N - 1, math.floor(v.x + half))
    y0, y1 = max(0, math.ceil(v.y - half)), min(N - 1, math.floor(v.y + half))
    return ScaleBox(v, scale, side, (x0, x1, y0, y1))


def branching_scale(v: Vertex, w: Vertex, grid: GridSize, resolution: int | None = None) -> float:
    """
    Largest grid scale at which [v]_lambda and [w]_lambda intersect.

    Args:
        v, w: Vertices of V_N
        grid: Grid size
        resolution: Number of grid steps (default n, i.e. lambda in {i/n})

    Returns:
        Branching scale in [0, 1]; 1 when v == w
    """
    if v == w:
        return 1.0
    steps = resolution or max(grid.n, 1)
    for i in range(steps, -1, -1):
        lam = i / steps
        if scale_box(v, lam, grid).intersects(scale_box(w, lam, grid)):
            return lam
    return 0.0
