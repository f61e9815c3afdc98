"""Two-layer softmax head trained and sampled with dropout.

The head computes softmax(relu(x D1 W1 + b1) D2 W2), where D1 and D2 are
diagonal keep-masks on the input and hidden layers. There is no bias on
the output layer. Masks use inverted-dropout scaling (kept units are
multiplied by 1/(1 - p)) during both training and stochastic inference,
so the deterministic pass needs no rescaling.

Repeated stochastic passes over one input give a Monte Carlo estimate of
the predictive distribution: the per-class mean is the prediction, the
per-class sample variance is the uncertainty consumed by the voting layer.
"""

from dataclasses import dataclass, field
from zipfile import BadZipFile

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import rng as rngmod
from .errors import DataError, DimensionError, ParameterError
from .numeric import column_mean_variance, relu, sample_dropout_mask, softmax, softmax_rows
from .validation import as_matrix, as_vector, check_lengths_match

# Floor inside log() of the cross-entropy so a saturated class cannot
# produce -inf loss.
LOG_FLOOR = 1e-12

CHECKPOINT_VERSION = 1


@dataclass
class MCPrediction:
    """Monte Carlo summary of stochastic passes over one input.

    mean[i] estimates the predictive probability of class i, uncertainty[i]
    is the sample variance (divisor M - 1) of the passes for class i.
    """

    mean: np.ndarray
    uncertainty: np.ndarray
    n_passes: int
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, samples, keep_samples: bool = False) -> "MCPrediction":
        arr = np.asarray(samples, dtype=np.float64)
        mean, var = column_mean_variance(arr)
        return cls(mean=mean, uncertainty=var,
                   n_passes=arr.shape[0],
                   samples=arr if keep_samples else None)


def loss_and_gradients(W1, b1, W2, X, y_idx, mask1, mask2, keep_scale):
    """Mean cross-entropy over a batch and its gradients, with masks frozen.

    mask1 (B x d) and mask2 (B x h) are the per-sample keep-masks; freezing
    them makes the loss a deterministic function of the weights, which is
    what a finite-difference check needs.

    Returns (loss, grad_W1, grad_b1, grad_W2).
    """
    B = X.shape[0]
    Xd = X * mask1 * keep_scale
    Z1 = Xd @ W1 + b1
    A = relu(Z1)
    Ad = A * mask2 * keep_scale
    logits = Ad @ W2
    Q = softmax_rows(logits)

    picked = Q[np.arange(B), y_idx]
    loss = float(np.mean(-np.log(np.maximum(picked, LOG_FLOOR))))

    dlogits = Q.copy()
    dlogits[np.arange(B), y_idx] -= 1.0
    dlogits /= B
    grad_W2 = Ad.T @ dlogits
    dAd = dlogits @ W2.T
    dZ1 = dAd * mask2 * keep_scale
    dZ1[Z1 <= 0.0] = 0.0
    grad_W1 = Xd.T @ dZ1
    grad_b1 = dZ1.sum(axis=0)
    return loss, grad_W1, grad_b1, grad_W2


class MCDropoutClassifier(BaseEstimator, ClassifierMixin):
    """Dropout-sampled two-layer softmax classifier over feature vectors.

    Parameters
    ----------
    hidden_size : int, default=256
        Width of the single hidden layer.
    dropout : float, default=0.7
        Drop rate applied to the input and hidden layers, in [0, 1).
    learning_rate : float, default=0.005
        SGD step size.
    momentum : float, default=0.9
        Classical momentum coefficient, in [0, 1).
    epochs : int, default=100
        Full passes over the training set.
    batch_size : int, default=64
        Minibatch size; the last batch of an epoch may be smaller.
    seed : int, default=0
        Seed for weight init, epoch shuffling and training masks. The same
        seed reproduces the fit bit for bit.

    Attributes
    ----------
    classes_ : ndarray of shape (K,)
        Class labels in index order (sorted).
    W1_, b1_, W2_ : ndarray
        Fitted weights. There is no output-layer bias.
    loss_history_ : list of float
        Epoch-averaged training cross-entropy.
    """

    def __init__(self, hidden_size=256, dropout=0.7, learning_rate=0.005,
                 momentum=0.9, epochs=100, batch_size=64, seed=0):
        self.hidden_size = hidden_size
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    # ------------------------------------------------------------------
    def _check_params(self):
        if self.hidden_size < 1:
            raise ParameterError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0.0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")

    def _check_fitted(self):
        if not hasattr(self, "W1_"):
            raise NotFittedError("this classifier has not been fitted yet")

    @property
    def _keep_scale(self) -> float:
        return 1.0 / (1.0 - self.dropout)

    # ------------------------------------------------------------------
    def fit(self, X, y):
        """Train the head with SGD + momentum on masked cross-entropy.

        y may hold any hashable labels; they are indexed in sorted order.
        """
        self._check_params()
        X = as_matrix(X, "X")
        y = np.asarray(y)
        check_lengths_match(X, y, "X", "y")
        classes, y_idx = np.unique(y, return_inverse=True)
        if classes.shape[0] < 2:
            raise DataError(f"training needs at least 2 classes, got {classes.shape[0]}")

        n, d = X.shape
        h = int(self.hidden_size)
        k = classes.shape[0]
        scale = self._keep_scale
        keep = 1.0 - self.dropout

        init = rngmod.child(self.seed, "init")
        W1 = init.normal(0.0, np.sqrt(2.0 / d), size=(d, h))
        b1 = np.zeros(h)
        W2 = init.normal(0.0, np.sqrt(2.0 / h), size=(h, k))

        train_rng = rngmod.child(self.seed, "train")
        vW1 = np.zeros_like(W1)
        vb1 = np.zeros_like(b1)
        vW2 = np.zeros_like(W2)
        history = []
        for _ in range(int(self.epochs)):
            order = train_rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, int(self.batch_size)):
                batch = order[start:start + int(self.batch_size)]
                Xb = X[batch]
                yb = y_idx[batch]
                # one fresh mask per sample per presentation
                m1 = (train_rng.random((batch.size, d)) < keep).astype(np.float64)
                m2 = (train_rng.random((batch.size, h)) < keep).astype(np.float64)
                loss, gW1, gb1, gW2 = loss_and_gradients(W1, b1, W2, Xb, yb, m1, m2, scale)
                vW1 = self.momentum * vW1 - self.learning_rate * gW1
                vb1 = self.momentum * vb1 - self.learning_rate * gb1
                vW2 = self.momentum * vW2 - self.learning_rate * gW2
                W1 = W1 + vW1
                b1 = b1 + vb1
                W2 = W2 + vW2
                epoch_loss += loss * batch.size
            history.append(epoch_loss / n)

        self.classes_ = classes
        self.n_features_in_ = d
        self.W1_ = W1
        self.b1_ = b1
        self.W2_ = W2
        self.loss_history_ = history
        return self

    # ------------------------------------------------------------------
    def predict_proba(self, X) -> np.ndarray:
        """Deterministic pass: no masks, no rescaling."""
        self._check_fitted()
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        return softmax_rows(relu(X @ self.W1_ + self.b1_) @ self.W2_)

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def forward_deterministic(self, x) -> np.ndarray:
        """Deterministic class probabilities for a single feature vector."""
        return self.predict_proba(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]

    def forward_stochastic(self, x, rng) -> np.ndarray:
        """One masked pass for a single feature vector.

        Draws the input mask first, then the hidden mask, from the given
        stream; kept units are scaled by 1/(1 - dropout).
        """
        self._check_fitted()
        x = as_vector(x, "x")
        if x.shape[0] != self.n_features_in_:
            raise DimensionError(
                f"x has {x.shape[0]} features, the model was fitted with {self.n_features_in_}")
        rng = rngmod.as_stream(rng)
        scale = self._keep_scale
        m1 = sample_dropout_mask(self.n_features_in_, self.dropout, rng)
        m2 = sample_dropout_mask(int(self.hidden_size), self.dropout, rng)
        z1 = (x * m1 * scale) @ self.W1_ + self.b1_
        logits = (relu(z1) * m2 * scale) @ self.W2_
        return softmax(logits)

    def mc_predict(self, x, n_passes=100, rng=0, keep_samples=False) -> MCPrediction:
        """Summarize n_passes stochastic passes over one input.

        Equivalent by construction to stacking forward_stochastic outputs
        drawn from the same stream and reducing with column_mean_variance.
        """
        if n_passes < 2:
            raise ParameterError(f"n_passes must be >= 2, got {n_passes}")
        rng = rngmod.as_stream(rng)
        rows = [self.forward_stochastic(x, rng) for _ in range(int(n_passes))]
        return MCPrediction.from_samples(np.stack(rows), keep_samples=keep_samples)

    # ------------------------------------------------------------------
    def save(self, path) -> None:
        """Write a versioned checkpoint that round-trips bit-exactly."""
        self._check_fitted()
        with open(path, "wb") as fh:
            np.savez(
                fh,
                format_version=np.int64(CHECKPOINT_VERSION),
                class_labels=np.asarray(self.classes_, dtype=np.str_),
                input_dim=np.int64(self.n_features_in_),
                hidden_size=np.int64(self.hidden_size),
                dropout=np.float64(self.dropout),
                learning_rate=np.float64(self.learning_rate),
                momentum=np.float64(self.momentum),
                epochs=np.int64(self.epochs),
                batch_size=np.int64(self.batch_size),
                seed=np.int64(self.seed),
                W1=self.W1_,
                b1=self.b1_,
                W2=self.W2_,
            )

    @classmethod
    def load(cls, path) -> "MCDropoutClassifier":
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, BadZipFile, ValueError) as exc:
            raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
        with data:
            if "format_version" not in data:
                raise DataError(f"{path}: not a checkpoint file (no format_version)")
            version = int(data["format_version"])
            if version != CHECKPOINT_VERSION:
                raise DataError(f"{path}: unsupported checkpoint version {version}")
            model = cls(
                hidden_size=int(data["hidden_size"]),
                dropout=float(data["dropout"]),
                learning_rate=float(data["learning_rate"]),
                momentum=float(data["momentum"]),
                epochs=int(data["epochs"]),
                batch_size=int(data["batch_size"]),
                seed=int(data["seed"]),
            )
            model.classes_ = data["class_labels"]
            model.n_features_in_ = int(data["input_dim"])
            model.W1_ = data["W1"]
            model.b1_ = data["b1"]
            model.W2_ = data["W2"]
            model.loss_history_ = []
        if model.W1_.shape != (model.n_features_in_, model.hidden_size):
            raise DataError(f"{path}: weight shapes inconsistent with stated dims")
        if model.W2_.shape[0] != model.hidden_size or model.W2_.shape[1] != model.classes_.shape[0]:
            raise DataError(f"{path}: weight shapes inconsistent with stated dims")
        return model
