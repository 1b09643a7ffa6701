import math

import numpy as np
import pytest

from src.config import Settings, reset_settings
from src.covariance import (cov_ibrw, cov_mibrw, cov_psi, merge_reports, psi_variance_report,
                            rho_near_sup, rho_truncation_gain, slope_verdict, verify_cov_comp,
                            verify_increment_lemma)
from src.errors import HypothesisError, RangeError
from src.green import Rectangle, green_matrix
from src.lattice import GridSize, Vertex
from src.profile import LOG2
from src.schemas import CovarianceReport, ItemReport
from src.utils import Checkpoint


class TestMibrwCovariance:
    def test_flat_variance(self, flat):
        grid = GridSize(3)
        cov = cov_mibrw(flat, grid)
        assert cov.variance == pytest.approx(4.0)
        assert np.allclose(np.diag(cov.matrix(grid.vertices())), 4.0)

    def test_truncated_variance(self, flat):
        assert cov_mibrw(flat, GridSize(3), k0=2).variance == pytest.approx(2.0)

    def test_top_level_is_shared(self, flat):
        cov = cov_mibrw(flat, GridSize(3), k0=3)
        assert cov(Vertex(0, 0), Vertex(5, 2)) == pytest.approx(1.0)
        assert cov.rho(Vertex(0, 0), Vertex(5, 2)) == pytest.approx(0.0)

    def test_positive_semidefinite(self, convex2):
        grid = GridSize(3)
        matrix = cov_mibrw(convex2, grid, k0=1).matrix(grid.vertices())
        assert np.allclose(matrix, matrix.T)
        assert np.linalg.eigvalsh(matrix).min() > -1e-9

    def test_k0_range(self, flat):
        with pytest.raises(RangeError):
            cov_mibrw(flat, GridSize(3), k0=4)


class TestIbrwCovariance:
    def test_branching_levels(self, flat):
        cov = cov_ibrw(flat, GridSize(2))
        assert cov(Vertex(1, 1), Vertex(1, 1)) == pytest.approx(3 * LOG2)
        assert cov(Vertex(0, 0), Vertex(1, 0)) == pytest.approx(2 * LOG2)
        assert cov(Vertex(0, 0), Vertex(2, 0)) == pytest.approx(LOG2)

    def test_embedding_adds_private_levels(self, flat):
        cov = cov_ibrw(flat, GridSize(2), kappa=2)
        assert cov.variance == pytest.approx(5 * LOG2)
        assert cov(Vertex(0, 0), Vertex(1, 0)) == pytest.approx(2 * LOG2)


def test_flat_psi_covariance_is_green(flat):
    grid = GridSize(3)
    assert np.allclose(cov_psi(flat, grid), green_matrix(Rectangle.box(grid)).full())


class TestCovComp:
    def test_item_i_is_bounded_small_n(self, flat):
        report = verify_cov_comp(flat, [2, 3, 4], items=["i"], seed=0)
        assert set(report.items) == {"i"}
        assert max(report.items["i"].deviations.values()) <= 4.5
        assert report.items["i"].pairs[2] == 16 * 17 // 2

    def test_dense_items_skipped_above_limit(self, flat, tmp_path):
        reset_settings(Settings(cache_dir=None, max_dense_side=16, threads=1, data_dir=tmp_path))
        report = verify_cov_comp(flat, [3], items=["iii"], seed=0)
        assert report.details["skipped"] == {"iii": [3]}
        assert report.items["iii"].deviations == {}

    def test_checkpoint_resumes(self, convex2, tmp_path):
        checkpoint = Checkpoint(tmp_path, "sweep")
        first = verify_cov_comp(convex2, [3], items=["ii"], seed=1, checkpoint=checkpoint)
        assert (tmp_path / "sweep" / "cov_comp_n3.json").exists()
        again = verify_cov_comp(convex2, [3], items=["ii"], seed=1, checkpoint=checkpoint)
        assert again.items["ii"].deviations == first.items["ii"].deviations

    def test_pair_subsampling(self, flat):
        report = verify_cov_comp(flat, [3], items=["i"], seed=0, pair_limit=100)
        assert report.items["i"].pairs[3] == 100


class TestSlopeVerdict:
    def test_growing(self):
        slope, threshold, verdict = slope_verdict([3, 4, 5], [1.0, 2.0, 3.0], 1.0, 0.05)
        assert slope == pytest.approx(1.0)
        assert threshold == pytest.approx(0.05)
        assert verdict == "growing"

    def test_bounded(self):
        assert slope_verdict([3, 4, 5], [2.0, 2.0, 2.0], LOG2, 0.05)[2] == "bounded"

    def test_single_point(self):
        assert slope_verdict([4], [10.0], 1.0, 0.05) == (0.0, 0.05, "undetermined")


def test_merge_reports():
    def single(n, value):
        return CovarianceReport(lemma="increment", verdict="bounded",
                                items={"same_scale": ItemReport(deviations={n: value})})

    merged = merge_reports([single(3, 1.0), single(4, 2.0), single(5, 3.0)], 0.05, 1.0)
    assert merged.items["same_scale"].deviations == {3: 1.0, 4: 2.0, 5: 3.0}
    assert merged.verdict == "growing"
    assert merge_reports([single(3, 1.0), single(4, 1.0)], 0.05, 1.0).verdict == "bounded"
    assert merge_reports([single(3, 1.0)], 0.05).verdict == "undetermined"
    with pytest.raises(RangeError):
        merge_reports([], 0.05)


class TestRho:
    def test_near_sup_vanishes_at_top_level(self, flat):
        grid = GridSize(4)
        assert rho_near_sup(flat, grid, 4) == pytest.approx(0.0, abs=1e-12)
        assert rho_near_sup(flat, grid, 1) > 0

    @pytest.mark.parametrize("k0", [1, 4])
    def test_truncation_gain(self, flat, k0):
        gain, g = rho_truncation_gain(flat, GridSize(4), k0)
        assert g == pytest.approx(math.sqrt(k0) - 1)
        assert gain >= g - 1e-12


class TestIncrementLemma:
    def test_flat_single_scale(self, flat):
        report = verify_increment_lemma(flat, GridSize(4), 0.3)
        assert report.lemma == "increment"
        assert report.verdict == "undetermined"
        assert report.items["cross_scale"].deviations == {4: 0.0}
        assert report.items["same_scale"].pairs[4] > 0

    def test_hypotheses(self, convex2):
        with pytest.raises(HypothesisError):
            verify_increment_lemma(convex2, GridSize(2), 0.3)


def test_psi_variance_report(convex2):
    report = psi_variance_report(convex2, [3, 4], delta=0.25)
    assert report.lemma == "psi_variance"
    assert set(report.items) == {"alpha0", "offdiag_ratio"}
    assert set(report.items["alpha0"].deviations) == {3, 4}
    assert report.details["delta"] == 0.25
