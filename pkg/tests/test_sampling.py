import warnings

import numpy as np
import pytest

from totalhsic.models import portfolio, portfolio_sigma
from totalhsic.sampling import (
    GaussianLaw,
    NotPSDError,
    UniformBoxLaw,
    conditional_law,
    empirical_moments,
    fix_coordinate,
    mvn_sample,
    psd_factor,
    rng_for,
    uniform_sample,
)


class TestGaussianLaw:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            GaussianLaw([0, 0], [[1, 0.5], [0.4, 1]])

    def test_rejects_indefinite(self):
        with pytest.raises(NotPSDError):
            GaussianLaw([0, 0], [[1, 2], [2, 1]])

    def test_psd_factor_singular(self):
        cov = portfolio_sigma(1.0)
        F = psd_factor(cov)
        np.testing.assert_allclose(F @ F.T, cov, atol=1e-12)
        rank_one = np.outer([1.0, 2.0], [1.0, 2.0])
        F = psd_factor(rank_one)
        np.testing.assert_allclose(F @ F.T, rank_one, atol=1e-12)


class TestMvnSample:
    def test_zero_covariance(self):
        mu = np.array([1.0, -2.0, 3.0])
        x = mvn_sample(GaussianLaw(mu, np.zeros((3, 3))), 20, 0)
        np.testing.assert_array_equal(x, np.tile(mu, (20, 1)))

    def test_identity_covariance(self):
        x = mvn_sample(GaussianLaw(np.zeros(3), np.eye(3)), 50000, 1)
        assert np.abs(np.cov(x.T) - np.eye(3)).max() <= 0.05

    def test_portfolio_correlation(self):
        x = mvn_sample(GaussianLaw(np.zeros(5), portfolio_sigma(1.0)), 50000, 2)
        assert np.corrcoef(x.T)[0, 4] == pytest.approx(0.8, abs=0.02)

    def test_deterministic(self):
        law = GaussianLaw(np.zeros(2), np.eye(2))
        np.testing.assert_array_equal(mvn_sample(law, 10, 5), mvn_sample(law, 10, 5))
        assert not np.array_equal(mvn_sample(law, 10, 5), mvn_sample(law, 10, 6))

    def test_covariance_error_rate(self):
        law = GaussianLaw(np.zeros(5), portfolio_sigma(0.5))

        def err(n, seed):
            return np.abs(np.cov(mvn_sample(law, n, seed).T) - law.covariance).max()

        ratios = [err(4000, s) / err(1000, s) for s in range(20)]
        assert np.mean(ratios) <= 0.75


class TestUniformSample:
    def test_mean_and_support(self):
        x = uniform_sample(UniformBoxLaw([0.0], [1.0]), 100000, 0)
        assert x.mean() == pytest.approx(0.5, abs=0.01)
        assert x.min() >= 0 and x.max() < 1

    def test_determinism(self):
        law = UniformBoxLaw([-1, 0], [1, 3])
        np.testing.assert_array_equal(uniform_sample(law, 7, 1), uniform_sample(law, 7, 1))
        assert not np.array_equal(uniform_sample(law, 7, 1), uniform_sample(law, 7, 2))

    def test_box_validation(self):
        with pytest.raises(ValueError):
            UniformBoxLaw([1.0], [1.0])

    def test_around(self):
        law = UniformBoxLaw.around([10.0, -2.0], 0.1)
        np.testing.assert_allclose(law.lower, [9.0, -2.2])
        np.testing.assert_allclose(law.upper, [11.0, -1.8])

    def test_streams_are_independent(self):
        a = rng_for(0, 1, 0).random(5)
        b = rng_for(0, 1, 1).random(5)
        assert not np.array_equal(a, b)


class TestFixCoordinate:
    def test_single_column(self):
        np.testing.assert_array_equal(fix_coordinate(np.arange(4.0)[:, None], 0, 7.0), np.full((4, 1), 7.0))

    def test_idempotent_and_other_columns_untouched(self, rng):
        x = rng.normal(size=(30, 4))
        once = fix_coordinate(x, 2, 0.5)
        np.testing.assert_array_equal(fix_coordinate(once, 2, 0.5), once)
        np.testing.assert_array_equal(once[:, [0, 1, 3]], x[:, [0, 1, 3]])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            fix_coordinate(np.zeros((3, 2)), 2, 0.0)

    def test_portfolio_variance_ratio(self):
        x = mvn_sample(GaussianLaw(np.zeros(5), portfolio_sigma(0.0)), 200000, 3)
        ratio = portfolio(fix_coordinate(x, 4, 0.0)).var() / portfolio(x).var()
        assert ratio == pytest.approx(900 / 916, abs=0.01)


class TestConditionalLaw:
    def test_schur_complement(self):
        cov = portfolio_sigma(1.0)
        law = conditional_law(GaussianLaw(np.zeros(5), cov), 4, 0.0)
        keep = [0, 1, 2, 3]
        expected = cov[np.ix_(keep, keep)] - np.outer(cov[keep, 4], cov[4, keep])
        np.testing.assert_allclose(law.covariance[np.ix_(keep, keep)], expected, atol=1e-15)
        assert np.all(law.covariance[4] == 0)
        assert law.mean[4] == 0.0

    def test_independent_matches_replacement(self):
        law = conditional_law(GaussianLaw([1.0, 2.0], np.eye(2)), 0, 5.0)
        np.testing.assert_allclose(law.mean, [5.0, 2.0])
        np.testing.assert_allclose(law.covariance, [[0, 0], [0, 1]])


class TestEmpiricalMoments:
    def test_identical_rows(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _, cov, corr = empirical_moments(np.ones((5, 2)))
        np.testing.assert_array_equal(cov, np.zeros((2, 2)))
        np.testing.assert_array_equal(corr, np.eye(2))

    def test_two_points(self):
        _, cov, _ = empirical_moments([-1.0, 1.0])
        assert cov[0, 0] == 2.0

    def test_unit_diagonal(self, rng):
        _, _, corr = empirical_moments(rng.normal(size=(50, 4)))
        np.testing.assert_array_equal(np.diag(corr), np.ones(4))

    def test_zero_variance_warns(self, rng):
        x = np.column_stack([rng.normal(size=10), np.zeros(10)])
        with pytest.warns(RuntimeWarning, match="zero-variance"):
            _, _, corr = empirical_moments(x)
        assert corr[0, 1] == 0.0
