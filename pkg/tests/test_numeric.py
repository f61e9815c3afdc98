"""Numeric kernel checks: frozen closed-form values plus randomized laws."""

import numpy as np
import pytest

from quorum import rng as rngmod
from quorum.errors import DataError, DimensionError, ParameterError
from quorum.numeric import (
    column_mean_variance,
    l2_normalize,
    relu,
    sample_dropout_mask,
    softmax,
    softmax_rows,
)


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], rtol=0, atol=0)

    def test_two_logit_closed_form(self):
        # e / (e + 1) and 1 / (e + 1)
        expected = [0.7310585786300049, 0.2689414213699951]
        np.testing.assert_allclose(softmax([1.0, 0.0]), expected, rtol=0, atol=1e-15)

    def test_extreme_logit_does_not_overflow(self):
        out = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(out))
        # exp(-1000) underflows below the smallest subnormal
        np.testing.assert_allclose(out, [1.0, 0.0], rtol=0, atol=0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            z = rng.uniform(-50.0, 50.0, size=rng.integers(2, 12))
            c = rng.uniform(-100.0, 100.0)
            np.testing.assert_allclose(softmax(z + c), softmax(z), rtol=0, atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            z = rng.uniform(-30.0, 30.0, size=rng.integers(2, 40))
            assert abs(softmax(z).sum() - 1.0) <= 1e-12

    def test_rows_match_vector_version(self):
        rng = np.random.default_rng(3)
        Z = rng.normal(size=(20, 6))
        rows = softmax_rows(Z)
        for i in range(20):
            np.testing.assert_array_equal(rows[i], softmax(Z[i]))

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            softmax([])

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            softmax([1.0, np.nan])


class TestRelu:
    def test_values(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


class TestDropoutMask:
    def test_zero_rate_is_identity(self):
        mask = sample_dropout_mask(10, 0.0, rngmod.stream(0))
        np.testing.assert_array_equal(mask, np.ones(10))

    def test_retained_fraction(self):
        mask = sample_dropout_mask(100_000, 0.7, rngmod.stream(123))
        assert 0.295 <= mask.mean() <= 0.305

    def test_binary_values(self):
        mask = sample_dropout_mask(1000, 0.5, rngmod.stream(5))
        assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_deterministic_given_seed(self):
        a = sample_dropout_mask(256, 0.3, rngmod.stream(9))
        b = sample_dropout_mask(256, 0.3, rngmod.stream(9))
        np.testing.assert_array_equal(a, b)

    def test_rate_one_rejected(self):
        with pytest.raises(ParameterError):
            sample_dropout_mask(4, 1.0, rngmod.stream(0))

    def test_negative_rate_rejected(self):
        with pytest.raises(ParameterError):
            sample_dropout_mask(4, -0.1, rngmod.stream(0))


def _two_pass_mean_variance(arr):
    """Independent textbook reference: mean, then squared deviations / (M - 1)."""
    arr = np.asarray(arr, dtype=np.float64)
    mean = arr.sum(axis=0) / arr.shape[0]
    var = ((arr - mean) ** 2).sum(axis=0) / (arr.shape[0] - 1)
    return mean, var


class TestColumnMeanVariance:
    def test_hand_case(self):
        mean, var = column_mean_variance([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(mean, [0.5, 0.5], rtol=0, atol=0)
        np.testing.assert_allclose(var, [0.5, 0.5], rtol=0, atol=0)

    def test_constant_rows_give_zero_variance(self):
        _, var = column_mean_variance(np.full((50, 3), 3.25))
        np.testing.assert_array_equal(var, np.zeros(3))

    def test_single_row_rejected(self):
        with pytest.raises(DimensionError):
            column_mean_variance([[1.0, 2.0]])

    def test_matches_two_pass_reference(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            arr = rng.normal(scale=rng.uniform(0.01, 10.0),
                             size=(rng.integers(2, 60), rng.integers(1, 8)))
            mean, var = column_mean_variance(arr)
            ref_mean, ref_var = _two_pass_mean_variance(arr)
            np.testing.assert_allclose(mean, ref_mean, rtol=0, atol=1e-12)
            np.testing.assert_allclose(var, ref_var, rtol=0, atol=1e-12)

    def test_variance_never_negative(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            base = rng.normal(size=4)
            # nearly constant columns stress the accumulator
            arr = base + rng.normal(scale=1e-12, size=(30, 4))
            _, var = column_mean_variance(arr)
            assert np.all(var >= 0.0)


class TestL2Normalize:
    def test_unit_norm(self):
        v = l2_normalize(np.array([3.0, 4.0]))
        np.testing.assert_allclose(v, [0.6, 0.8], rtol=0, atol=1e-15)

    def test_zero_vector_unchanged(self):
        np.testing.assert_array_equal(l2_normalize(np.zeros(3)), np.zeros(3))


class TestStreams:
    def test_replay_identical(self):
        a = rngmod.stream(2024).random(10_000)
        b = rngmod.stream(2024).random(10_000)
        np.testing.assert_array_equal(a, b)

    def test_children_differ_by_label(self):
        a = rngmod.child(7, "alpha").random(100)
        b = rngmod.child(7, "beta").random(100)
        assert not np.array_equal(a, b)

    def test_child_replay(self):
        a = rngmod.child(7, "mc", 3).random(100)
        b = rngmod.child(7, "mc", 3).random(100)
        np.testing.assert_array_equal(a, b)

    def test_child_differs_from_root(self):
        a = rngmod.stream(7).random(100)
        b = rngmod.child(7, 0).random(100)
        assert not np.array_equal(a, b)

    def test_negative_label_rejected(self):
        with pytest.raises(ParameterError):
            rngmod.child(1, -3)

    def test_as_stream_accepts_seed_and_generator(self):
        g = rngmod.stream(5)
        assert rngmod.as_stream(g) is g
        np.testing.assert_array_equal(rngmod.as_stream(5).random(10), rngmod.stream(5).random(10))
        with pytest.raises(ParameterError):
            rngmod.as_stream("not a seed")
