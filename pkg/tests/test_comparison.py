import math

import numpy as np
import pytest

from src.comparison import (borell_tail, build_lower_coupling, build_mean_lower_chain,
                            build_mean_upper_chain, build_upper_coupling, check_slepian_hypotheses,
                            comparison_tilde, lower_chain_window, lower_embedding,
                            sudakov_fernique_gap, tail_inequality)
from src.covariance import cov_psi
from src.errors import DomainError, KappaTooSmallError, RangeError
from src.lattice import GridSize
from src.samplers import ibrw_variance


class TestSlepian:
    def test_identical_fields_pass(self):
        cov = np.array([[2.0, 1.0, 0.5], [1.0, 2.0, 0.2], [0.5, 0.2, 2.0]])
        report = check_slepian_hypotheses(cov, cov)
        assert report.passed
        assert report.checked_pairs == 3
        assert report.violations == []

    def test_weaker_correlation_is_listed(self):
        cov_x = np.eye(3)
        cov_y = np.eye(3) + 0.5 * (np.ones((3, 3)) - np.eye(3))
        report = check_slepian_hypotheses(cov_x, cov_y)
        assert not report.passed
        assert len(report.violations) == 3
        assert report.violations[0][2] == pytest.approx(0.5)

    def test_variance_mismatch(self):
        report = check_slepian_hypotheses(np.eye(2), 2 * np.eye(2))
        assert not report.passed
        assert report.diagonal_max_gap == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            check_slepian_hypotheses(np.eye(2), np.eye(3))


class TestSudakovFernique:
    def test_identical_fields(self):
        cov = np.array([[1.0, 0.3], [0.3, 1.0]])
        report = sudakov_fernique_gap(cov, cov)
        assert report.gamma == pytest.approx(0.0)
        assert report.bound == pytest.approx(0.0)
        assert report.one_sided

    def test_gap_and_bound(self):
        report = sudakov_fernique_gap(np.ones((4, 4)), np.eye(4))
        assert report.gamma == pytest.approx(2.0)
        assert report.bound == pytest.approx(math.sqrt(2.0 * math.log(4)))
        assert report.one_sided
        assert not sudakov_fernique_gap(np.eye(4), np.ones((4, 4))).one_sided


class TestBorell:
    def test_values(self):
        assert borell_tail(1.0, 0.0) == pytest.approx(2.0)
        assert borell_tail(2.0, 2.0) == pytest.approx(2 * math.exp(-1.0))

    def test_domain(self):
        with pytest.raises(DomainError):
            borell_tail(0.0, 1.0)
        with pytest.raises(DomainError):
            borell_tail(1.0, -0.5)


class TestUpperCoupling:
    def test_auto_kappa(self, flat):
        spec = build_upper_coupling(flat, 3)
        assert spec.direction == "upper"
        assert spec.slepian.passed
        a = np.asarray(spec.a)
        assert (a >= 0).all()
        tilde = comparison_tilde(flat, 3, spec.kappa)
        variance = np.diag(cov_psi(flat, GridSize(3))) + a**2
        assert np.allclose(variance, ibrw_variance(tilde, 3, spec.kappa))

    def test_embedding_scales_vertices(self, flat):
        spec = build_upper_coupling(flat, 3)
        scale = 1 << spec.kappa
        assert all(e == (scale * x, scale * y) for e, (x, y) in zip(spec.embedding, spec.vertices))
        assert len(spec.vertices) == 64

    def test_shrunk_kappa_is_reported(self, flat):
        assert build_upper_coupling(flat, 3).kappa > 0
        try:
            spec = build_upper_coupling(flat, 3, kappa=0)
        except KappaTooSmallError as exc:
            assert exc.kappa == 0
            assert all(0 <= c < 8 for c in exc.vertex)
        else:
            assert spec.kappa == 0
            assert not spec.slepian.passed
            assert spec.slepian.violations


class TestLowerCoupling:
    def test_embedding(self):
        small, local, image = lower_embedding(5, 3)
        assert small.N == 4
        assert len(image) == 16
        assert image[0] == (8, 8)
        assert image[-1] == (11, 11)

    def test_embedding_range(self):
        with pytest.raises(RangeError):
            lower_embedding(4, 2)
        with pytest.raises(RangeError):
            lower_embedding(4, 4)

    def test_variances_match(self, flat):
        spec = build_lower_coupling(flat, 4, kappa=3)
        assert spec.direction == "lower"
        assert spec.slepian.diagonal_max_gap < 1e-9
        assert min(spec.a) >= 0
        assert spec.max_a_gap >= 0

    def test_auto_needs_room(self, flat):
        with pytest.raises(KappaTooSmallError):
            build_lower_coupling(flat, 3)


class TestMeanChains:
    def test_upper_chain_is_one_sided(self, convex2):
        spec, report = build_mean_upper_chain(convex2, 3)
        assert spec.direction == "mean-upper"
        assert spec.c1 >= 0
        assert report.one_sided

    def test_lower_chain(self, flat):
        spec, report = build_mean_lower_chain(flat, 3)
        assert spec.direction == "mean-lower"
        assert 0 <= spec.k0 <= 1
        assert report.one_sided
        assert spec.embedding[0] == (4, 4)

    def test_lower_window_range(self):
        with pytest.raises(RangeError):
            lower_chain_window(2)


class TestTailInequality:
    def test_same_samples_hold(self):
        values = np.random.default_rng(0).standard_normal(1000)
        report = tail_inequality(values, values, [0.0, 1.0, 2.0], 1.0, "max X <= max Y")
        assert report.holds
        assert [p.level for p in report.points] == [0.0, 1.0, 2.0]

    def test_clear_violation(self):
        report = tail_inequality(np.full(100, 5.0), np.zeros(100), [1.0], 1.0, "lhs <= rhs")
        assert not report.holds
        assert report.points[0].lhs == 1.0
        assert report.points[0].rhs == 0.0
