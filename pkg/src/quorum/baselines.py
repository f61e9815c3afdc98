"""Reference novelty scorers the voting detector is compared against.

All three expose scores oriented the same way as the detector: higher
means more novel. Feature normalization is left to the caller so the
scorers themselves stay convention-free.
"""

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import rng as rngmod
from .errors import DimensionError, NumericalError, ParameterError
from .validation import as_matrix, as_vector

LOG_2PI = np.log(2.0 * np.pi)


# ----------------------------------------------------------------------
# Gaussian mixture with diagonal covariances
# ----------------------------------------------------------------------
def _kmeans_assignments(X, k, rng, iters=100):
    """Lloyd's algorithm from k distinct random points; returns hard labels."""
    n = X.shape[0]
    centers = X[rng.choice(n, size=k, replace=False)].copy()
    assign = np.full(n, -1)
    for _ in range(iters):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            chosen = assign == j
            if chosen.any():
                centers[j] = X[chosen].mean(axis=0)
    return assign


class DiagonalGMM(BaseEstimator):
    """Gaussian mixture density with per-component diagonal covariance.

    Parameters
    ----------
    n_components : int, default=8
    covariance_floor : float, default=1e-6
        Lower bound applied to every variance after each M-step.
    tol : float, default=1e-6
        Stop when the relative log-likelihood improvement drops below this.
    max_iter : int, default=200
    seed : int, default=0
        Seeds the k-means initialization.

    Attributes
    ----------
    weights_, means_, covariances_ : mixture parameters after fitting.
    log_likelihood_history_ : total data log-likelihood per EM iteration.
    """

    def __init__(self, n_components=8, covariance_floor=1e-6, tol=1e-6,
                 max_iter=200, seed=0):
        self.n_components = n_components
        self.covariance_floor = covariance_floor
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("this mixture has not been fitted yet")

    def _log_component_density(self, X, means, covariances):
        # (n, k): log N(x | mu_j, diag(var_j))
        consts = -0.5 * np.sum(LOG_2PI + np.log(covariances), axis=1)
        quads = np.stack([
            -0.5 * np.sum((X - means[j]) ** 2 / covariances[j], axis=1)
            for j in range(means.shape[0])
        ], axis=1)
        return quads + consts

    def _e_step(self, X, weights, means, covariances):
        log_w = np.full(weights.shape, -np.inf)
        np.log(weights, out=log_w, where=weights > 0.0)
        weighted = self._log_component_density(X, means, covariances) + log_w
        per_sample = logsumexp(weighted, axis=1)
        resp = np.exp(weighted - per_sample[:, None])
        return float(per_sample.sum()), resp

    def _m_step(self, X, resp):
        n, d = X.shape
        counts = resp.sum(axis=0)
        safe = np.maximum(counts, np.finfo(np.float64).tiny)
        weights = counts / n
        means = (resp.T @ X) / safe[:, None]
        covariances = np.empty((resp.shape[1], d))
        for j in range(resp.shape[1]):
            diff = X - means[j]
            covariances[j] = (resp[:, j, None] * diff ** 2).sum(axis=0) / safe[j]
        covariances = np.maximum(covariances, self.covariance_floor)
        return weights, means, covariances

    def fit(self, X):
        """Run EM from a k-means-seeded start until the likelihood stalls."""
        if self.n_components < 1:
            raise ParameterError(f"n_components must be >= 1, got {self.n_components}")
        if self.covariance_floor <= 0.0:
            raise ParameterError(f"covariance_floor must be > 0, got {self.covariance_floor}")
        if self.tol <= 0.0:
            raise ParameterError(f"tol must be > 0, got {self.tol}")
        X = as_matrix(X, "X")
        n, _ = X.shape
        k = int(self.n_components)
        if n < k:
            raise DimensionError(f"need at least {k} samples to fit {k} components, got {n}")

        assign = _kmeans_assignments(X, k, rngmod.child(self.seed, "kmeans"))
        resp = np.zeros((n, k))
        resp[np.arange(n), assign] = 1.0
        weights, means, covariances = self._m_step(X, resp)

        history = []
        converged = False
        for _ in range(int(self.max_iter)):
            ll, resp = self._e_step(X, weights, means, covariances)
            history.append(ll)
            if len(history) > 1:
                prev = history[-2]
                if (ll - prev) / max(abs(prev), np.finfo(np.float64).tiny) < self.tol:
                    converged = True
                    break
            weights, means, covariances = self._m_step(X, resp)

        self.weights_ = weights
        self.means_ = means
        self.covariances_ = covariances
        self.log_likelihood_history_ = history
        self.converged_ = converged
        self.n_features_in_ = X.shape[1]
        return self

    def log_density(self, X) -> np.ndarray:
        """Per-sample log p(x) under the fitted mixture."""
        self._check_fitted()
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {X.shape[1]} features, the mixture was fitted with {self.n_features_in_}")
        log_w = np.full(self.weights_.shape, -np.inf)
        np.log(self.weights_, out=log_w, where=self.weights_ > 0.0)
        weighted = self._log_component_density(X, self.means_, self.covariances_) + log_w
        return logsumexp(weighted, axis=1)

    def responsibilities(self, X) -> np.ndarray:
        self._check_fitted()
        X = as_matrix(X, "X")
        _, resp = self._e_step(X, self.weights_, self.means_, self.covariances_)
        return resp

    def novelty_score(self, X) -> np.ndarray:
        """Negative log-density: higher means more novel."""
        return -self.log_density(X)


# ----------------------------------------------------------------------
# One-class SVM with an RBF kernel, solved in the dual
# ----------------------------------------------------------------------
class RbfOneClassSVM(BaseEstimator):
    """Boundary-of-support estimator trained on a single class.

    Solves min 0.5 a'Ka subject to 0 <= a_i <= 1/(nu n), sum a = 1 by
    most-violating-pair coordinate descent, then sets the offset rho from
    the margin support vectors. The novelty score of x is
    rho - sum_i a_i k(s_i, x), so points far from the training support
    score high.

    Parameters
    ----------
    nu : float, default=0.1
        Upper bound on the training outlier fraction, in (0, 1].
    gamma : float or None, default=None
        RBF width; None means 1 / n_features.
    tol : float, default=1e-4
        KKT gap at which the solver stops.
    max_iter : int or None, default=None
        Safety cap on pair updates; None picks one from the problem size.
    """

    def __init__(self, nu=0.1, gamma=None, tol=1e-4, max_iter=None):
        self.nu = nu
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def _check_fitted(self):
        if not hasattr(self, "alpha_"):
            raise NotFittedError("this model has not been fitted yet")

    def _kernel(self, A, B):
        sq = (np.sum(A ** 2, axis=1)[:, None] + np.sum(B ** 2, axis=1)[None, :]
              - 2.0 * A @ B.T)
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-self.gamma_ * sq)

    def fit(self, X):
        if not 0.0 < self.nu <= 1.0:
            raise ParameterError(f"nu must be in (0, 1], got {self.nu}")
        if self.tol <= 0.0:
            raise ParameterError(f"tol must be > 0, got {self.tol}")
        X = as_matrix(X, "X")
        n, d = X.shape
        self.gamma_ = 1.0 / d if self.gamma is None else float(self.gamma)
        if self.gamma_ <= 0.0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma_}")

        C = 1.0 / (self.nu * n)
        K = self._kernel(X, X)
        alpha = np.full(n, 1.0 / n)
        G = K @ alpha
        eps = C * 1e-10
        cap = int(self.max_iter) if self.max_iter is not None else max(200 * n, 20_000)

        converged = False
        it = 0
        for it in range(cap):
            up = alpha < C - eps
            low = alpha > eps
            if not up.any() or not low.any():
                converged = True  # nothing can move (nu = 1 corner)
                break
            up_idx = np.flatnonzero(up)
            low_idx = np.flatnonzero(low)
            i = up_idx[np.argmin(G[up_idx])]
            j = low_idx[np.argmax(G[low_idx])]
            gap = G[j] - G[i]
            if gap <= self.tol:
                converged = True
                break
            eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
            step = gap / eta if eta > 1e-15 else np.inf
            step = min(step, C - alpha[i], alpha[j])
            alpha[i] += step
            alpha[j] -= step
            G += step * (K[:, i] - K[:, j])
        if not converged:
            raise NumericalError(f"dual solver did not reach KKT gap {self.tol} in {cap} updates")

        sv_eps = C * 1e-12
        margin = (alpha > sv_eps) & (alpha < C - sv_eps)
        up = alpha < C - eps
        low = alpha > eps
        if margin.any():
            rho = float(G[margin].mean())
        elif up.any() and low.any():
            rho = float((G[up].min() + G[low].max()) / 2.0)
        elif low.any():
            rho = float(G[low].max())
        else:
            rho = float(G.min())

        support = alpha > sv_eps
        self.alpha_ = alpha
        self.rho_ = rho
        self.support_ = np.flatnonzero(support)
        self.support_vectors_ = X[support]
        self.dual_coef_ = alpha[support]
        self.dual_objective_ = float(0.5 * alpha @ K @ alpha)
        self.converged_ = converged
        self.n_iter_ = it
        self.n_features_in_ = d
        return self

    def decision_function(self, X) -> np.ndarray:
        """Signed boundary distance: positive inside the support region."""
        self._check_fitted()
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        return self._kernel(X, self.support_vectors_) @ self.dual_coef_ - self.rho_

    def novelty_score(self, X) -> np.ndarray:
        return -self.decision_function(X)


# ----------------------------------------------------------------------
# Deterministic confidence of the classifier head
# ----------------------------------------------------------------------
def softmax_confidence_score(model, x) -> float:
    """1 minus the head's top deterministic probability for one sample."""
    x = as_vector(x, "x")
    return float(1.0 - np.max(model.forward_deterministic(x)))


def softmax_confidence_scores(model, X) -> np.ndarray:
    """Batch version of softmax_confidence_score."""
    proba = model.predict_proba(X)
    return 1.0 - proba.max(axis=1)
