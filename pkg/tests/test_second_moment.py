import numpy as np
import pytest

from src.errors import DomainError, MethodUnsupportedError, RangeError, ZeroFirstMomentError
from src.lattice import GridSize, Vertex
from src.profile import mibrw_centring
from src.samplers import FieldSpec, iter_blocks, sample_dgff, sample_mibrw
from src.second_moment import (MomentPool, PathEventSpec, bridge_diagnostics, calibrate_cf,
                               coarse_paths, direct_events, endpoint_probability, first_moment,
                               moment_pool, moments_table, paley_zygmund_bound, path_event,
                               path_events, second_moment, tube_probability)


@pytest.fixture
def flat_spec(flat):
    return PathEventSpec.build(flat, 4, 0.0, 8.0)


@pytest.fixture
def flat_pool(flat_spec):
    return moment_pool(flat_spec, 256, seed=11)


class TestBuild:
    def test_single_piece_threshold(self, flat):
        spec = PathEventSpec.build(flat, 6, 0.0, 1.0)
        assert spec.times == (0, 6)
        assert spec.upper[0] == pytest.approx(mibrw_centring(flat, 6, 6))
        assert spec.direct_threshold() == pytest.approx(spec.upper[0])

    def test_direct_threshold_tracks_y(self, three_scale):
        spec = PathEventSpec.build(three_scale, 10, 2.0, 1.0)
        assert spec.direct_threshold() == pytest.approx(mibrw_centring(three_scale, 10, 10) + 2.0)

    def test_y_shifts_first_interval(self, decreasing2):
        base = PathEventSpec.build(decreasing2, 10, 0.0, 1.0)
        shifted = PathEventSpec.build(decreasing2, 10, 1.5, 1.0)
        assert shifted.upper[0] == pytest.approx(base.upper[0] + 1.5)
        assert shifted.upper[1:] == pytest.approx(base.upper[1:])
        assert all(u - l == pytest.approx(1.0) for l, u in zip(base.lower, base.upper))

    def test_ratios_reach_one_at_piece_ends(self, three_scale):
        spec = PathEventSpec.build(three_scale, 10, 0.0, 1.0)
        assert spec.times == (0, 3, 5, 10)
        assert spec.ratios[list(spec.times[1:])] == pytest.approx([1.0, 1.0, 1.0])
        assert np.all((spec.ratios > 0) & (spec.ratios <= 1))

    def test_rejects_bad_arguments(self, flat, three_scale):
        with pytest.raises(DomainError):
            PathEventSpec.build(flat, 6, -1.0, 1.0)
        with pytest.raises(DomainError):
            PathEventSpec.build(flat, 6, 0.0, 0.0)
        with pytest.raises(RangeError):
            PathEventSpec.build(three_scale, 2, 0.0, 1.0)

    def test_window(self, flat_spec):
        assert flat_spec.window() == (slice(4, 12), slice(4, 12))
        assert flat_spec.window_size() == 64


class TestPaths:
    def test_coarse_paths(self, flat):
        levels = sample_mibrw(flat, GridSize(3), seed=1).levels
        paths = coarse_paths(levels)
        assert paths.shape == (4, 8, 8)
        assert np.all(paths[0] == 0.0)
        assert np.allclose(paths[1], levels[3])
        assert np.allclose(paths[3], levels[1:].sum(axis=0))

    def test_wide_barrier_leaves_the_interval(self, flat):
        spec = PathEventSpec.build(flat, 4, 0.0, 1e6)
        levels = sample_mibrw(flat, GridSize(4), seed=3).levels
        end = coarse_paths(levels)[4]
        expected = (end >= spec.lower[0]) & (end <= spec.upper[0])
        assert np.array_equal(path_events(levels, spec), expected)

    def test_monotone_in_r(self, flat_spec, flat):
        levels = sample_mibrw(flat, GridSize(4), seed=5).levels
        assert path_events(levels, flat_spec, r=0).all()
        for r in range(4):
            later = path_events(levels, flat_spec, r + 1)
            assert not np.any(later & ~path_events(levels, flat_spec, r))

    def test_unreachable_interval(self, flat):
        spec = PathEventSpec.build(flat, 4, 100.0, 8.0)
        levels = sample_mibrw(flat, GridSize(4), seed=5).levels
        assert not path_events(levels, spec).any()

    def test_r_range(self, flat_spec, flat):
        levels = sample_mibrw(flat, GridSize(4), seed=5).levels
        with pytest.raises(RangeError):
            path_events(levels, flat_spec, r=5)

    def test_single_vertex(self, flat_spec, flat):
        sample = sample_mibrw(flat, GridSize(4), seed=6)
        v = Vertex(7, 9)
        assert path_event(sample, v, flat_spec) == bool(path_events(sample.levels, flat_spec)[7, 9])

    def test_needs_levels(self, flat_spec):
        with pytest.raises(DomainError):
            path_event(sample_dgff(GridSize(4), seed=1), Vertex(1, 1), flat_spec)

    def test_grid_mismatch(self, flat_spec, flat):
        with pytest.raises(RangeError):
            path_event(sample_mibrw(flat, GridSize(3), seed=1), Vertex(1, 1), flat_spec)


class TestMoments:
    def test_pair_decomposition(self, flat_spec, flat_pool):
        assert np.allclose(flat_pool.by_scale.sum(axis=1), flat_pool.h**2)
        # the diagonal v = w sits at r = n
        assert np.all(flat_pool.by_scale[:, flat_spec.n] >= flat_pool.h)

    def test_second_moment_dominates(self, flat_spec, flat_pool):
        first = first_moment(flat_spec, pool=flat_pool)
        second = second_moment(flat_spec, pool=flat_pool)
        assert second.value >= first.value**2
        assert sum(second.details["by_scale"].values()) == pytest.approx(second.value)

    def test_paley_zygmund_bound(self, flat_spec, flat_pool):
        pz = paley_zygmund_bound(flat_spec, pool=flat_pool)
        # Cauchy-Schwarz on the pool itself
        assert 0 < pz.bound <= np.mean(flat_pool.h > 0) + 1e-12
        assert pz.direct_tail == pytest.approx(flat_pool.direct.mean())
        assert pz.direct_ci[0] <= pz.direct_tail <= pz.direct_ci[1]
        assert pz.holds == (pz.bound <= pz.direct_ci[1] + 1e-12)
        assert pz.c_tilde >= 0

    def test_direct_tail_uses_the_full_field(self, flat_spec, flat_pool):
        field = FieldSpec("mibrw", 4, flat_spec.profile)
        values = np.concatenate(list(iter_blocks(field, 256, seed=11)))
        top = values.reshape(256, -1).max(axis=1)
        assert np.array_equal(flat_pool.direct, top > mibrw_centring(flat_spec.profile, 4, 4))

    def test_direct_event_not_implied_by_h(self, flat):
        spec = PathEventSpec.build(flat, 4, 0.0, 1e6)
        levels = np.zeros((1, 5, 16, 16))
        levels[0, 4, 8, 8] = spec.lower[0] + 0.5
        assert path_events(levels, spec)[0].sum() == 1
        assert not direct_events(levels.sum(axis=1), spec)[0]

    def test_direct_event_counts_every_vertex(self, flat_spec):
        values = np.zeros((2, 16, 16))
        values[0, 0, 0] = flat_spec.direct_threshold() + 0.1
        values[1, 8, 8] = flat_spec.direct_threshold()
        assert direct_events(values, flat_spec).tolist() == [True, False]

    def test_bound_above_direct_fails(self, flat_spec):
        by_scale = np.zeros((8, 5))
        by_scale[:4, 4] = 1.0
        pool = MomentPool(h=np.array([1.0] * 4 + [0.0] * 4), by_scale=by_scale,
                          direct=np.zeros(8, dtype=bool))
        pz = paley_zygmund_bound(flat_spec, pool=pool)
        assert pz.bound == pytest.approx(0.5)
        assert pz.direct_tail == 0.0
        assert not pz.holds

    def test_zero_first_moment(self, flat):
        spec = PathEventSpec.build(flat, 4, 100.0, 8.0)
        with pytest.raises(ZeroFirstMomentError):
            paley_zygmund_bound(spec, replicates=64, seed=1)

    def test_semi_analytic_needs_one_scale(self, three_scale):
        spec = PathEventSpec.build(three_scale, 10, 0.0, 1.0)
        with pytest.raises(MethodUnsupportedError):
            first_moment(spec, method="semi-analytic")

    def test_unknown_method(self, flat_spec):
        with pytest.raises(MethodUnsupportedError):
            first_moment(flat_spec, method="exact")

    def test_semi_analytic_agrees(self, flat):
        rows = moments_table(flat, 4, [0.0], 8.0, 1024, seed=2, method="semi-analytic")
        assert len(rows) == 1
        assert rows[0]["agreement_z"] < 5
        assert rows[0]["second_moment"] >= rows[0]["first_moment"] ** 2


class TestTube:
    def test_endpoint_probability(self, flat_spec):
        assert 0 < endpoint_probability(flat_spec) < 1

    def test_wide_tube(self, flat):
        spec = PathEventSpec.build(flat, 6, 0.0, 1e6)
        assert tube_probability(spec, 128, seed=1) == (1.0, 0.0)

    def test_calibration(self, flat):
        assert calibrate_cf(flat, 6, replicates=64, seed=1, target=0.0) == 1.0
        assert calibrate_cf(flat, 6, replicates=64, seed=1, candidates=(3.0,), target=1.1) == 3.0

    def test_bridge_diagnostics(self, flat_spec):
        result = bridge_diagnostics(flat_spec, 2000, seed=3)
        assert result["covariance_z"] < 5
        assert result["variance_z"] < 5
