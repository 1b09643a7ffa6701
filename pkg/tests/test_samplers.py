import math

import numpy as np
import pytest
from scipy import stats

from src.covariance import cov_ibrw, cov_mibrw, cov_psi
from src.errors import NegativeCouplingError, RangeError, SizeLimitError
from src.green import Rectangle, green_matrix
from src.lattice import GridSize
from src.profile import LOG2
from src.samplers import (FieldSpec, gaussian_kurtosis_bound, ibrw_variance, iter_blocks,
                          map_blocks, mibrw_level_variances, sample_coupled, sample_dgff,
                          sample_field, sample_ibrw, sample_mibrw, sample_psi, torus_window_sum)

REPLICATES = 4096


def _pool(spec: FieldSpec, seed: int) -> np.ndarray:
    blocks = list(iter_blocks(spec, REPLICATES, seed))
    values = np.concatenate(blocks)
    return values.reshape(values.shape[0], -1)


def _assert_covariances(values: np.ndarray, exact: np.ndarray, pairs):
    centred = values - values.mean(axis=0)
    for i, j in pairs:
        empirical = float(np.mean(centred[:, i] * centred[:, j]))
        se = math.sqrt((exact[i, i] * exact[j, j] + exact[i, j] ** 2) / values.shape[0])
        assert abs(empirical - exact[i, j]) <= 5 * se + 1e-12


PAIRS = [(9, 9), (9, 10), (9, 18), (18, 45), (27, 27), (20, 43), (36, 54)]


class TestCovarianceAgreement:
    def test_dgff(self):
        grid = GridSize(3)
        exact = green_matrix(Rectangle.box(grid)).full()
        _assert_covariances(_pool(FieldSpec("dgff", 3), 1), exact, PAIRS)

    def test_psi(self, convex2):
        grid = GridSize(3)
        exact = cov_psi(convex2, grid)
        _assert_covariances(_pool(FieldSpec("psi", 3, convex2), 2), exact, PAIRS)

    @pytest.mark.parametrize("kappa", [0, 1])
    def test_ibrw(self, decreasing2, kappa):
        grid = GridSize(3)
        exact = cov_ibrw(decreasing2, grid, kappa).matrix(grid.vertices())
        _assert_covariances(_pool(FieldSpec("ibrw", 3, decreasing2, kappa=kappa), 3), exact, PAIRS)

    @pytest.mark.parametrize("kind, k0", [("mibrw", 0), ("tmibrw", 2)])
    def test_mibrw(self, convex2, kind, k0):
        grid = GridSize(3)
        exact = cov_mibrw(convex2, grid, k0).matrix(grid.vertices())
        _assert_covariances(_pool(FieldSpec(kind, 3, convex2, k0=k0), 4), exact, PAIRS)


class TestDgff:
    def test_dirichlet_boundary(self):
        sample = sample_dgff(GridSize(3), seed=5)
        assert np.all(sample.values[~GridSize(3).interior_mask()] == 0.0)

    def test_deterministic(self):
        first = sample_dgff(GridSize(3), seed=5).values
        assert np.array_equal(first, sample_dgff(GridSize(3), seed=5).values)
        assert not np.array_equal(first, sample_dgff(GridSize(3), seed=6).values)

    def test_tiny_grid_is_zero(self):
        assert np.all(sample_dgff(GridSize(1), seed=0).values == 0.0)

    def test_marginals_look_gaussian(self):
        values = _pool(FieldSpec("dgff", 3), 9)[:, 3 * 8 + 4]
        assert abs(stats.kurtosis(values)) <= gaussian_kurtosis_bound(values.size) * 5 / 3


def test_flat_psi_is_the_dgff(flat):
    sample = sample_psi(flat, GridSize(3), seed=3)
    assert np.allclose(sample.values, sample.extra["phi"])
    assert np.allclose(sample.values, sample_dgff(GridSize(3), seed=3).values)


class TestIbrw:
    def test_top_level_only_is_constant(self, flat):
        values = sample_ibrw(flat, GridSize(3), t=0, seed=1).values
        assert np.allclose(values, values[0, 0])

    def test_t_range(self, flat):
        with pytest.raises(RangeError):
            sample_ibrw(flat, GridSize(3), t=5, seed=1)

    def test_variance(self, flat):
        assert ibrw_variance(flat, 3) == pytest.approx(4 * LOG2)
        assert ibrw_variance(flat, 3, kappa=2) == pytest.approx(6 * LOG2)


class TestMibrw:
    def test_levels_sum_to_field(self, convex2):
        sample = sample_mibrw(convex2, GridSize(3), seed=2)
        assert sample.kind == "mibrw"
        assert sample.levels.shape == (4, 8, 8)
        assert np.allclose(sample.levels.sum(axis=0), sample.values)

    def test_truncation_drops_fine_levels(self, convex2):
        full = sample_mibrw(convex2, GridSize(3), k0=0, seed=2)
        truncated = sample_mibrw(convex2, GridSize(3), k0=2, seed=2)
        assert truncated.kind == "tmibrw"
        assert np.all(truncated.levels[:2] == 0.0)
        assert np.allclose(truncated.levels[2:], full.levels[2:])

    def test_k0_range(self, flat):
        with pytest.raises(RangeError):
            sample_mibrw(flat, GridSize(3), k0=4)

    def test_level_variances(self, convex2):
        variances = mibrw_level_variances(convex2, 4)
        assert variances[[0, 1, 3, 4]] == pytest.approx([1.5, 1.5, 0.5, 0.5])


def test_torus_window_sum_matches_loops():
    noise = np.random.default_rng(7).standard_normal((8, 8))
    for side in (1, 2, 4, 8):
        out = torus_window_sum(noise, side)
        brute = np.zeros_like(noise)
        for x in range(8):
            for y in range(8):
                brute[x, y] = sum(noise[(x - i) % 8, (y - j) % 8]
                                  for i in range(side) for j in range(side))
        assert np.allclose(out, brute)


class TestCoupled:
    def test_shared_normal(self, flat):
        base = sample_mibrw(flat, GridSize(2), seed=1)
        coupled = sample_coupled(base, np.ones(16), seed=4)
        assert np.allclose(coupled.values - base.values, coupled.extra["X"])

    def test_zero_coefficients(self, flat):
        base = sample_mibrw(flat, GridSize(2), seed=1)
        assert np.array_equal(sample_coupled(base, np.zeros(16), seed=4).values, base.values)

    def test_negative_coefficient(self, flat):
        base = sample_mibrw(flat, GridSize(2), seed=1)
        a = np.ones(16)
        a[3] = -0.1
        with pytest.raises(NegativeCouplingError):
            sample_coupled(base, a, seed=4)


class TestBlocks:
    def test_independent_of_thread_count(self, convex2):
        spec = FieldSpec("mibrw", 3, convex2)

        def reducer(block):
            return block.reshape(block.shape[0], -1).max(axis=1)

        single = np.concatenate(map_blocks(spec, 200, 8, reducer, threads=1))
        pooled = np.concatenate(map_blocks(spec, 200, 8, reducer, threads=3))
        assert single.shape == (200,)
        assert np.array_equal(single, pooled)

    def test_keep_levels(self, flat):
        values, levels = next(iter_blocks(FieldSpec("mibrw", 2, flat), 10, 1, keep_levels=True))
        assert values.shape == (10, 4, 4)
        assert levels.shape == (10, 3, 4, 4)

    def test_validation(self, flat):
        with pytest.raises(RangeError):
            FieldSpec("psi", 3).validate()
        with pytest.raises(SizeLimitError):
            FieldSpec("dgff", 7).validate()
        with pytest.raises(RangeError):
            FieldSpec("tmibrw", 3, flat, k0=5).validate()

    @pytest.mark.parametrize("kind", ["dgff", "psi", "ibrw", "mibrw", "tmibrw"])
    def test_sample_field_dispatch(self, convex2, kind):
        spec = FieldSpec(kind, 2, None if kind == "dgff" else convex2, k0=1 if kind == "tmibrw" else 0)
        sample = sample_field(spec, seed=3)
        assert sample.values.shape == (4, 4)
        assert sample.kind == kind
