"""Baseline scorer checks: closed-form fits, EM monotonicity, dual solver
constraints against a brute-force grid, confidence scores."""

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from quorum import rng as rngmod
from quorum.baselines import (
    DiagonalGMM,
    RbfOneClassSVM,
    softmax_confidence_score,
    softmax_confidence_scores,
)
from quorum.errors import DimensionError, ParameterError
from quorum.head import MCDropoutClassifier


class TestDiagonalGMM:
    def test_single_component_closed_form(self):
        # k = 1 EM is the Gaussian MLE: sample mean, population variance
        model = DiagonalGMM(n_components=1).fit(np.array([[0.0], [2.0]]))
        np.testing.assert_allclose(model.weights_, [1.0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(model.means_, [[1.0]], rtol=0, atol=1e-9)
        np.testing.assert_allclose(model.covariances_, [[1.0]], rtol=0, atol=1e-9)

    def test_score_at_single_component_mean(self):
        model = DiagonalGMM(n_components=1).fit(np.array([[0.0], [2.0]]))
        score = model.novelty_score(np.array([[1.0]]))[0]
        assert score == pytest.approx(0.5 * np.log(2.0 * np.pi), abs=1e-9)

    def test_log_likelihood_monotone(self):
        g = rngmod.stream(21)
        for trial in range(10):
            X = np.vstack([
                g.normal(g.uniform(-4, 4, size=3), g.uniform(0.3, 1.5), size=(40, 3))
                for _ in range(3)
            ])
            model = DiagonalGMM(n_components=3, seed=trial).fit(X)
            hist = model.log_likelihood_history_
            assert len(hist) >= 1
            for prev, cur in zip(hist, hist[1:]):
                assert cur >= prev - 1e-9

    def test_component_per_point_floor_engages(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
        model = DiagonalGMM(n_components=3).fit(X)
        # each component collapses onto one point; the floor keeps things finite
        assert np.all(model.covariances_ >= 1e-6)
        assert np.all(np.isfinite(model.log_density(X)))

    def test_weights_and_responsibilities_normalized(self):
        g = rngmod.stream(5)
        X = g.normal(size=(60, 4))
        model = DiagonalGMM(n_components=4).fit(X)
        assert abs(model.weights_.sum() - 1.0) <= 1e-9
        resp = model.responsibilities(X)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, rtol=0, atol=1e-9)
        assert np.all(resp >= 0.0)

    def test_score_rises_away_from_data(self):
        g = rngmod.stream(6)
        X = g.normal(0.0, 1.0, size=(200, 2))
        model = DiagonalGMM(n_components=2).fit(X)
        near = model.novelty_score(np.array([[0.0, 0.0]]))[0]
        far = model.novelty_score(np.array([[8.0, 8.0]]))[0]
        assert far > near

    def test_identical_inputs_identical_scores(self):
        g = rngmod.stream(7)
        X = g.normal(size=(30, 2))
        model = DiagonalGMM(n_components=2).fit(X)
        q = np.array([[0.3, -0.2], [0.3, -0.2]])
        scores = model.novelty_score(q)
        assert scores[0] == scores[1]

    def test_deterministic_given_seed(self):
        g = rngmod.stream(8)
        X = g.normal(size=(50, 3))
        a = DiagonalGMM(n_components=3, seed=4).fit(X)
        b = DiagonalGMM(n_components=3, seed=4).fit(X)
        np.testing.assert_array_equal(a.means_, b.means_)
        np.testing.assert_array_equal(a.covariances_, b.covariances_)
        np.testing.assert_array_equal(a.weights_, b.weights_)

    def test_too_few_samples_rejected(self):
        with pytest.raises(DimensionError):
            DiagonalGMM(n_components=5).fit(np.zeros((3, 2)))

    def test_bad_params_rejected(self):
        X = np.zeros((4, 2))
        with pytest.raises(ParameterError):
            DiagonalGMM(n_components=0).fit(X)
        with pytest.raises(ParameterError):
            DiagonalGMM(covariance_floor=0.0).fit(X)

    def test_unfitted_rejected(self):
        with pytest.raises(NotFittedError):
            DiagonalGMM().novelty_score(np.zeros((1, 2)))


def _grid_min_dual(K, C, step):
    """Brute-force oracle for n = 3: enumerate the feasible simplex."""
    vals = np.arange(0.0, min(C, 1.0) + step / 2, step)
    a1, a2 = np.meshgrid(vals, vals, indexing="ij")
    a3 = 1.0 - a1 - a2
    ok = (a3 >= 0.0) & (a3 <= C)
    A = np.stack([a1[ok], a2[ok], a3[ok]], axis=1)
    obj = 0.5 * np.einsum("ni,ij,nj->n", A, K, A)
    return float(obj.min())


class TestRbfOneClassSVM:
    def test_nu_one_forces_uniform_alphas(self):
        g = rngmod.stream(30)
        X = g.normal(size=(12, 2))
        model = RbfOneClassSVM(nu=1.0).fit(X)
        np.testing.assert_allclose(model.alpha_, np.full(12, 1.0 / 12.0), rtol=0, atol=1e-12)

    def test_constraints_hold(self):
        g = rngmod.stream(31)
        for nu in (0.05, 0.1, 0.5):
            X = g.normal(size=(40, 3))
            model = RbfOneClassSVM(nu=nu).fit(X)
            C = 1.0 / (nu * 40)
            assert abs(model.alpha_.sum() - 1.0) <= 1e-6
            assert np.all(model.alpha_ >= -1e-12)
            assert np.all(model.alpha_ <= C + 1e-12)

    def test_matches_grid_oracle_small(self):
        g = rngmod.stream(32)
        for trial in range(5):
            X = g.normal(size=(3, 2))
            model = RbfOneClassSVM(nu=0.6).fit(X)
            K = model._kernel(X, X)
            grid = _grid_min_dual(K, 1.0 / (0.6 * 3), step=2e-2)
            assert model.dual_objective_ <= grid + 1e-9
            assert grid - model.dual_objective_ <= 1e-2

    def test_duplicated_dataset_same_decision_function(self):
        g = rngmod.stream(33)
        X = g.normal(size=(25, 2))
        doubled = np.vstack([X, X])
        a = RbfOneClassSVM(nu=0.2).fit(X)
        b = RbfOneClassSVM(nu=0.2).fit(doubled)
        q = g.normal(size=(40, 2))
        np.testing.assert_allclose(a.decision_function(q), b.decision_function(q),
                                   rtol=0, atol=1e-4)

    def test_far_point_scores_higher_than_interior(self):
        g = rngmod.stream(34)
        X = g.normal(0.0, 1.0, size=(80, 2))
        model = RbfOneClassSVM(nu=0.1).fit(X)
        inside = model.novelty_score(np.array([[0.0, 0.0]]))[0]
        outside = model.novelty_score(np.array([[10.0, 10.0]]))[0]
        assert outside > inside
        # far from all support, the score approaches rho
        assert outside == pytest.approx(model.rho_, abs=1e-6)

    def test_identical_inputs_identical_scores(self):
        g = rngmod.stream(35)
        X = g.normal(size=(30, 2))
        model = RbfOneClassSVM().fit(X)
        q = np.array([[0.5, 0.5], [0.5, 0.5]])
        s = model.novelty_score(q)
        assert s[0] == s[1]

    def test_score_locally_smooth(self):
        g = rngmod.stream(36)
        X = g.normal(size=(50, 2))
        model = RbfOneClassSVM().fit(X)
        base = model.novelty_score(np.array([[0.2, -0.1]]))[0]
        nudged = model.novelty_score(np.array([[0.2 + 1e-7, -0.1]]))[0]
        assert abs(nudged - base) < 1e-5

    def test_default_gamma_is_reciprocal_dim(self):
        X = rngmod.stream(37).normal(size=(10, 4))
        model = RbfOneClassSVM().fit(X)
        assert model.gamma_ == 0.25

    def test_bad_nu_rejected(self):
        X = np.zeros((4, 2))
        with pytest.raises(ParameterError):
            RbfOneClassSVM(nu=0.0).fit(X)
        with pytest.raises(ParameterError):
            RbfOneClassSVM(nu=1.5).fit(X)


class TestSoftmaxConfidence:
    def _fixed_output_model(self, probs):
        # relu(b1) selects row 0 of W2, whose entries are log(probs)
        probs = np.asarray(probs, dtype=np.float64)
        model = MCDropoutClassifier(hidden_size=2, dropout=0.5)
        model.classes_ = np.array([f"c{i}" for i in range(probs.size)])
        model.n_features_in_ = 3
        model.W1_ = np.zeros((3, 2))
        model.b1_ = np.array([1.0, 0.0])
        model.W2_ = np.vstack([np.log(probs), np.zeros(probs.size)])
        return model

    def test_hand_case(self):
        model = self._fixed_output_model([0.9, 0.05, 0.05])
        score = softmax_confidence_score(model, np.zeros(3))
        assert score == pytest.approx(0.1, abs=1e-12)

    def test_bounds(self):
        model = self._fixed_output_model([0.25, 0.25, 0.25, 0.25])
        score = softmax_confidence_score(model, np.zeros(3))
        assert score == pytest.approx(0.75, abs=1e-12)  # uniform is the ceiling

    def test_batch_matches_single(self, four_class):
        model, X, _, _, _ = four_class
        batch = softmax_confidence_scores(model, X[:6])
        singles = [softmax_confidence_score(model, X[i]) for i in range(6)]
        np.testing.assert_allclose(batch, singles, rtol=0, atol=1e-15)
