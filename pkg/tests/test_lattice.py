import math

import pytest

from src.errors import DomainError, RangeError
from src.lattice import (GridSize, Vertex, bd_box, box_side, branching_scale, common_box_count,
                         log_plus, scale_box, shared_scale_count, torus_boxes, torus_distance)


class TestLogPlus:
    @pytest.mark.parametrize("x, expected", [(1, 0.0), (8, 3.0), (0.5, 0.0)])
    def test_values(self, x, expected):
        assert log_plus(x) == expected

    @pytest.mark.parametrize("x", [0, -1.0])
    def test_non_positive_rejected(self, x):
        with pytest.raises(DomainError):
            log_plus(x)


class TestGridSize:
    def test_side_and_size(self):
        grid = GridSize(3)
        assert grid.N == 8
        assert grid.size == 64

    def test_negative_exponent(self):
        with pytest.raises(RangeError):
            GridSize(-1)

    def test_sampling_needs_positive_n(self):
        with pytest.raises(RangeError):
            GridSize(0).require_sampling()

    def test_index_round_trip(self):
        grid = GridSize(2)
        assert [grid.vertex(grid.index(v)) for v in grid.vertices()] == grid.vertices()

    def test_delta_interior(self):
        grid = GridSize(4)
        inner = grid.delta_interior(0.25)
        assert all(4 < v.x < 12 and 4 < v.y < 12 for v in inner)
        assert len(inner) == 7 * 7


class TestTorusDistance:
    def test_wraps(self):
        assert torus_distance(Vertex(0, 0), Vertex(3, 0), GridSize(2)) == 1.0

    def test_same_vertex(self):
        assert torus_distance(Vertex(2, 5), Vertex(2, 5), GridSize(3)) == 0.0

    def test_max_metric(self):
        assert torus_distance(Vertex(0, 0), Vertex(4, 4), GridSize(3), "max") == 4.0

    def test_metric_ordering(self):
        grid = GridSize(3)
        for v, w in [(Vertex(0, 0), Vertex(5, 2)), (Vertex(1, 7), Vertex(6, 3))]:
            d = torus_distance(v, w, grid)
            d_inf = torus_distance(v, w, grid, "max")
            assert d_inf <= d <= math.sqrt(2) * d_inf + 1e-12
            assert d <= math.hypot(v.x - w.x, v.y - w.y)

    def test_unknown_metric(self):
        with pytest.raises(DomainError):
            torus_distance(Vertex(0, 0), Vertex(1, 1), GridSize(2), "taxicab")


class TestSharedScaleCount:
    def test_same_vertex(self):
        assert shared_scale_count(Vertex(3, 3), Vertex(3, 3), GridSize(5)) == 5

    def test_distance_one(self):
        assert shared_scale_count(Vertex(0, 0), Vertex(1, 0), GridSize(3)) == 2

    def test_distance_five(self):
        assert shared_scale_count(Vertex(0, 0), Vertex(5, 2), GridSize(4)) == 1


class TestCommonBoxCount:
    def test_hand_values(self):
        grid = GridSize(2)
        assert common_box_count(Vertex(0, 0), Vertex(1, 0), 1, grid) == 2
        assert common_box_count(Vertex(0, 0), Vertex(1, 0), 0, grid) == 0

    def test_same_vertex(self):
        grid = GridSize(3)
        for k in range(4):
            assert common_box_count(Vertex(2, 6), Vertex(2, 6), k, grid) == 4**k

    def test_matches_enumeration(self):
        grid = GridSize(3)
        pairs = [(Vertex(0, 0), Vertex(7, 1)), (Vertex(2, 3), Vertex(5, 3)), (Vertex(6, 6), Vertex(1, 2))]
        for v, w in pairs:
            for k in range(grid.n + 1):
                boxes = torus_boxes(v, k, grid)
                assert all(box.contains(v, grid) for box in boxes)
                brute = sum(box.contains(w, grid) for box in boxes)
                assert common_box_count(v, w, k, grid) == brute

    def test_level_out_of_range(self):
        with pytest.raises(RangeError):
            common_box_count(Vertex(0, 0), Vertex(1, 1), 4, GridSize(3))


def test_bd_box_anchor():
    box = bd_box(Vertex(5, 6), 2)
    assert box.anchor == (4, 4)
    assert box.contains(Vertex(7, 7), GridSize(3))
    assert not box.contains(Vertex(8, 7), GridSize(4))


class TestScaleBox:
    def test_scale_zero_is_whole_grid(self):
        box = scale_box(Vertex(3, 1), 0.0, GridSize(3))
        assert box.extent == (0, 7, 0, 7)

    def test_scale_one_is_the_vertex(self):
        box = scale_box(Vertex(3, 1), 1.0, GridSize(3))
        assert box.side == 1
        assert box.extent == (3, 3, 1, 1)
        assert box.interior_extent() is None

    def test_clipped_to_grid(self):
        box = scale_box(Vertex(0, 0), 0.5, GridSize(4))
        assert box_side(GridSize(4), 0.5) == 4
        assert box.extent == (0, 2, 0, 2)

    def test_scale_out_of_range(self):
        with pytest.raises(RangeError):
            scale_box(Vertex(0, 0), 1.5, GridSize(2))


class TestBranchingScale:
    def test_same_vertex(self):
        assert branching_scale(Vertex(1, 1), Vertex(1, 1), GridSize(3)) == 1.0

    def test_half_grid_apart(self):
        assert branching_scale(Vertex(4, 4), Vertex(12, 4), GridSize(4)) == pytest.approx(0.25)

    def test_neighbours(self):
        assert branching_scale(Vertex(4, 4), Vertex(5, 4), GridSize(4)) == pytest.approx(0.75)
