import math

import numpy as np
import pytest
from scipy.stats import kstest

from scfa import (
    DataMatrix,
    Membership,
    PartitionVector,
    estimate,
    generate,
    score_covariance,
    score_fgls,
    score_gls,
    score_ols,
)
from scfa.errors import DimensionMismatch, NonPositiveVariance

from conftest import STUDY_A, STUDY_B, study_spec


def _membership_332():
    return Membership.from_partition(PartitionVector([3, 3, 4]))


class TestScoreOls:
    def test_constant_row(self):
        x = np.vstack([np.full(5, 2.5), np.full(5, -1.0)])
        scores = score_ols(DataMatrix(x), Membership.from_partition([3, 2]))
        np.testing.assert_array_equal(scores.scores, [[2.5, 2.5], [-1.0, -1.0]])

    def test_community_means_by_hand(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0, 6.0], [0.0, 0.0, 0.0, 0.0, 0.0]])
        scores = score_ols(DataMatrix(x), Membership.from_partition([3, 2]))
        np.testing.assert_array_equal(scores.scores[0], [2.0, 5.0])

    def test_dimension_mismatch(self, rng):
        data = DataMatrix(rng.standard_normal((5, 7)))
        with pytest.raises(DimensionMismatch):
            score_ols(data, _membership_332())

    def test_linearity_exact_on_dyadics(self, rng):
        # integer data, dyadic coefficients and power-of-two communities keep
        # every intermediate exact, so linearity holds bit for bit
        membership = Membership.from_partition([4, 4])
        x = DataMatrix(rng.integers(-50, 50, (12, 8)).astype(float))
        y = DataMatrix(rng.integers(-50, 50, (12, 8)).astype(float))
        alpha, beta = 2.0, 0.5
        combo = DataMatrix(alpha * x.values + beta * y.values)
        left = score_ols(combo, membership).scores
        right = (
            alpha * score_ols(x, membership).scores
            + beta * score_ols(y, membership).scores
        )
        np.testing.assert_array_equal(left, right)

    def test_linearity_general(self, rng):
        membership = _membership_332()
        x = DataMatrix(rng.standard_normal((20, 10)))
        y = DataMatrix(rng.standard_normal((20, 10)))
        combo = DataMatrix(1.7 * x.values - 0.3 * y.values)
        left = score_ols(combo, membership).scores
        right = (
            1.7 * score_ols(x, membership).scores
            - 0.3 * score_ols(y, membership).scores
        )
        np.testing.assert_allclose(left, right, atol=1e-12)

    def test_unbiased(self):
        spec = study_spec(n=10_000, multiplier=1, seed=31)
        data, truth = generate(spec)
        scores = score_ols(data, _membership_332())
        err = scores.scores - truth
        mc_se = err.std(axis=0, ddof=1) / math.sqrt(spec.n)
        np.testing.assert_array_less(np.abs(err.mean(axis=0)), 4.0 * mc_se)

    def test_standardized_errors_are_normal(self):
        spec = study_spec(n=10_000, multiplier=1, seed=32)
        data, truth = generate(spec)
        scores = score_ols(data, _membership_332())
        sizes = np.array([3.0, 3.0, 4.0])
        standardized = (scores.scores - truth) / np.sqrt(STUDY_A / sizes)
        result = kstest(standardized.ravel(), "norm")
        assert result.pvalue > 0.01


class TestScoreGls:
    def test_unit_variances_equal_ols(self, rng):
        data = DataMatrix(rng.standard_normal((15, 10)))
        membership = _membership_332()
        ols = score_ols(data, membership).scores
        gls = score_gls(data, membership, np.ones(3)).scores
        np.testing.assert_array_equal(gls, ols)

    def test_arbitrary_variances_equal_ols(self, rng):
        data = DataMatrix(rng.standard_normal((15, 10)))
        membership = _membership_332()
        ols = score_ols(data, membership).scores
        gls = score_gls(data, membership, [0.1, 7.3, 2.2]).scores
        assert np.max(np.abs(gls - ols)) <= 1e-12

    def test_fgls_equals_ols(self, rng):
        spec = study_spec(n=60, multiplier=1, seed=8)
        data, _ = generate(spec)
        membership = _membership_332()
        fit = estimate(data, membership)
        ols = score_ols(data, membership).scores
        fgls = score_fgls(data, membership, fit).scores
        assert np.max(np.abs(fgls - ols)) <= 1e-12

    def test_rejects_nonpositive(self, rng):
        data = DataMatrix(rng.standard_normal((5, 10)))
        with pytest.raises(NonPositiveVariance):
            score_gls(data, _membership_332(), [1.0, 0.0, 2.0])

    def test_rejects_per_variable_vector(self, rng):
        data = DataMatrix(rng.standard_normal((5, 10)))
        with pytest.raises(DimensionMismatch):
            score_gls(data, _membership_332(), np.ones(10))


class TestScoreCovariance:
    def test_zero_errors_return_b(self):
        out = score_covariance(np.zeros(3), STUDY_B, PartitionVector([3, 3, 4]))
        np.testing.assert_array_equal(out, STUDY_B)

    def test_arithmetic(self):
        out = score_covariance(STUDY_A, STUDY_B, PartitionVector([6, 6, 8]))
        expected = STUDY_B + np.diag([0.1 / 6.0, 0.2 / 6.0, 0.5 / 8.0])
        np.testing.assert_allclose(out, expected, atol=1e-16)

    def test_diagonal_correction_shrinks(self):
        prev = None
        for mult in (1, 2, 4, 8):
            sizes = PartitionVector([3 * mult, 3 * mult, 4 * mult])
            corr = np.diag(score_covariance(STUDY_A, STUDY_B, sizes)) - np.diag(STUDY_B)
            if prev is not None:
                assert np.all(corr < prev)
            prev = corr

    def test_empirical_error_covariance(self):
        spec = study_spec(n=100_000, multiplier=1, seed=33)
        data, truth = generate(spec)
        scores = score_ols(data, _membership_332())
        err = scores.scores - truth
        emp = np.cov(err, rowvar=False)
        # cov(score - truth) = cov(score) - b = diag(a_k / p_k)
        expected = np.diag(STUDY_A / np.array([3.0, 3.0, 4.0]))
        scale = np.sqrt(np.outer(np.diag(expected), np.diag(expected)))
        np.testing.assert_array_less(np.abs(emp - expected), 0.03 * scale)

    def test_attached_by_pipeline_helper(self):
        cov = score_covariance(STUDY_A, STUDY_B, PartitionVector([3, 3, 4]))
        assert cov.shape == (3, 3)
        assert np.all(np.diag(cov) > np.diag(STUDY_B))
