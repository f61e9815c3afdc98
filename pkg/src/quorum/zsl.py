"""Embedding-space classification for samples the detector votes novel.

Class labels live in a semantic embedding space. A label made of several
words (underscore-separated) embeds as the renormalized mean of its word
vectors. Two routes map a sample into that space: a convex combination of
the top-k predicted class embeddings weighted by the head's probabilities,
or a linear projection of the feature vector fitted by ridge regression.
Classification is nearest neighbor by cosine similarity.

The generalized setting routes each sample through the novelty gate:
samples judged known keep the leader's label, samples judged novel are
classified among the unseen labels only.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import rng as rngmod
from .errors import DataError, DimensionError, NumericalError, ParameterError
from .numeric import l2_normalize
from .validation import as_matrix, as_vector, check_lengths_match

EMBED_FORMAT_LINE = "# embeddings v1"

GZSL_MODES = ("U->U", "U->U+S", "U+S->U+S")


class EmbeddingTable:
    """Label-to-vector lookup with multi-word composition.

    Stored vectors are L2-normalized at construction. vector() first tries
    the label verbatim, then splits on underscores and averages the word
    vectors it knows, dropping words it does not; a label with no known
    words is an error.
    """

    def __init__(self, vectors: dict):
        if not vectors:
            raise DataError("embedding table is empty")
        dims = {np.asarray(v).shape for v in vectors.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise DimensionError(f"embedding vectors disagree on shape: {sorted(dims)}")
        self.dim = next(iter(dims))[0]
        self._vectors = {}
        for label, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"embedding for {label!r} has non-finite entries")
            norm = float(np.linalg.norm(arr))
            if norm == 0.0:
                raise DataError(f"embedding for {label!r} has zero norm")
            self._vectors[str(label)] = arr / norm
        self._composed = {}

    def __contains__(self, label) -> bool:
        try:
            self.vector(label)
            return True
        except DataError:
            return False

    def __len__(self) -> int:
        return len(self._vectors)

    def vector(self, label) -> np.ndarray:
        """Unit vector for a label, composing multi-word labels on demand."""
        label = str(label)
        direct = self._vectors.get(label)
        if direct is not None:
            return direct
        cached = self._composed.get(label)
        if cached is not None:
            return cached
        words = [w for w in label.split("_") if w]
        known = [self._vectors[w] for w in words if w in self._vectors]
        if not known:
            raise DataError(f"no embedding for label {label!r} or any of its words")
        mean = np.mean(known, axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < 1e-12:
            raise NumericalError(f"word vectors for {label!r} cancel to zero norm")
        composed = mean / norm
        self._composed[label] = composed
        return composed

    def vectors_for(self, labels) -> np.ndarray:
        return np.stack([self.vector(lab) for lab in labels])

    # ------------------------------------------------------------------
    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        """Read the versioned text format: one `label v_1 ... v_d` per row."""
        vectors = {}
        try:
            with open(path, "r", encoding="utf-8") as fh:
                first = fh.readline().rstrip("\n")
                if first != EMBED_FORMAT_LINE:
                    raise DataError(f"{path}: unsupported embedding format line {first!r}")
                width = None
                for line_no, line in enumerate(fh, start=2):
                    if not line.strip():
                        continue
                    parts = line.split()
                    if len(parts) < 2:
                        raise DataError(f"{path}: line {line_no}: expected a label and values")
                    label = parts[0]
                    if label in vectors:
                        raise DataError(f"{path}: line {line_no}: duplicate label {label!r}")
                    if width is None:
                        width = len(parts) - 1
                    elif len(parts) - 1 != width:
                        raise DataError(
                            f"{path}: line {line_no}: expected {width} values, got {len(parts) - 1}")
                    try:
                        vec = np.array([float(v) for v in parts[1:]])
                    except ValueError as exc:
                        raise DataError(f"{path}: line {line_no}: {exc}") from exc
                    vectors[label] = vec
        except OSError as exc:
            raise DataError(f"{path}: cannot read embeddings ({exc})") from exc
        return cls(vectors)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(EMBED_FORMAT_LINE + "\n")
            for label, vec in self._vectors.items():
                fh.write(label + " " + " ".join(repr(float(v)) for v in vec) + "\n")


# ----------------------------------------------------------------------
def conse_embed(probs, class_labels, table: EmbeddingTable, top_k: int = 10) -> np.ndarray:
    """Convex combination of the top-k class embeddings, renormalized.

    probs is a probability vector aligned with class_labels. Ties at the
    top-k boundary prefer the lower class index.
    """
    probs = as_vector(probs, "probs")
    check_lengths_match(probs, class_labels, "probs", "class_labels")
    if np.any(probs < 0.0):
        raise DataError("probabilities must be non-negative")
    if not 1 <= top_k <= probs.size:
        raise ParameterError(f"top_k must be in [1, {probs.size}], got {top_k}")
    # stable sort on descending probability keeps lower indices first on ties
    order = np.argsort(-probs, kind="stable")[:top_k]
    weights = probs[order]
    total = float(weights.sum())
    if total <= 0.0:
        raise NumericalError("top-k probabilities sum to zero")
    embeddings = table.vectors_for([class_labels[i] for i in order])
    combined = (weights[:, None] * embeddings).sum(axis=0) / total
    norm = float(np.linalg.norm(combined))
    if norm < 1e-12:
        raise NumericalError("combined embedding cancelled to zero norm")
    return combined / norm


def nn_classify(vector, candidates, table: EmbeddingTable):
    """Candidate label whose embedding has the highest cosine similarity.

    Exact ties go to the lexicographically smaller label.
    """
    candidates = sorted(str(c) for c in candidates)
    if not candidates:
        raise ParameterError("no candidate labels to classify against")
    query = l2_normalize(as_vector(vector, "vector"))
    best_label = None
    best_sim = -np.inf
    for label in candidates:
        sim = float(query @ table.vector(label))
        if sim > best_sim:
            best_sim = sim
            best_label = label
    return best_label


class DeviseRegressor(BaseEstimator):
    """Ridge-regression map from feature space into embedding space.

    fit solves V = (X'X + ridge I)^-1 X'Y for target embeddings Y.
    ridge 0 is allowed only when X'X has full rank.
    """

    def __init__(self, ridge=1.0):
        self.ridge = ridge

    def fit(self, X, Y):
        if self.ridge < 0.0:
            raise ParameterError(f"ridge must be >= 0, got {self.ridge}")
        X = as_matrix(X, "X")
        Y = as_matrix(Y, "Y")
        check_lengths_match(X, Y, "X", "Y")
        d = X.shape[1]
        gram = X.T @ X + self.ridge * np.eye(d)
        if self.ridge == 0.0 and np.linalg.matrix_rank(gram) < d:
            raise NumericalError("X'X is rank-deficient; a positive ridge is required")
        try:
            self.V_ = np.linalg.solve(gram, X.T @ Y)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"normal equations are singular ({exc})") from exc
        self.n_features_in_ = d
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "V_"):
            raise NotFittedError("this projection has not been fitted yet")
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {X.shape[1]} features, the projection was fitted with {self.n_features_in_}")
        return X @ self.V_

    def project(self, x) -> np.ndarray:
        """Embedding-space image of a single feature vector."""
        return self.transform(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]

    def classify(self, x, candidates, table: EmbeddingTable):
        return nn_classify(self.project(x), candidates, table)


def devise_train(X, labels, table: EmbeddingTable, ridge: float = 1.0) -> DeviseRegressor:
    """Fit the projection against the embeddings of per-sample labels."""
    targets = table.vectors_for(labels)
    return DeviseRegressor(ridge=ridge).fit(X, targets)


# ----------------------------------------------------------------------
def gzsl_predict(x, detector, method: str, table: EmbeddingTable, seen_labels,
                 unseen_labels, mode: str, rng=None, top_k: int = 10,
                 devise: DeviseRegressor = None, prediction=None, force_novel=None):
    """Predict a label for one sample under a generalized zero-shot mode.

    In mode U->U the sample is classified among unseen labels directly.
    In the other modes the detector gates first: a sample judged known
    keeps the leader's seen label, a sample judged novel is classified
    among the unseen labels. force_novel overrides the gate (used to
    substitute an oracle); prediction supplies a precomputed Monte Carlo
    summary so scoring passes can be shared.
    """
    if mode not in GZSL_MODES:
        raise ParameterError(f"unknown mode {mode!r}, expected one of {GZSL_MODES}")
    if method not in ("conse", "devise"):
        raise ParameterError(f"unknown method {method!r}, expected 'conse' or 'devise'")
    seen = [str(lab) for lab in seen_labels]
    unseen = [str(lab) for lab in unseen_labels]
    overlap = set(seen) & set(unseen)
    if overlap:
        raise ParameterError(f"seen and unseen labels overlap: {sorted(overlap)}")
    if method == "devise" and devise is None:
        raise ParameterError("method 'devise' needs a fitted DeviseRegressor")

    def zsl_over_unseen():
        if method == "conse":
            pred = prediction
            if pred is None:
                if rng is None:
                    raise ParameterError("conse needs either a prediction or an rng")
                pred = detector.model.mc_predict(x, n_passes=detector.n_passes,
                                                 rng=rngmod.as_stream(rng))
            semantic = conse_embed(pred.mean, list(detector.model.classes_), table, top_k)
            return nn_classify(semantic, unseen, table)
        return devise.classify(x, unseen, table)

    if mode == "U->U":
        return zsl_over_unseen()

    if force_novel is None:
        pred = prediction
        if pred is None:
            if rng is None:
                raise ParameterError("gated modes need either a prediction or an rng")
            pred = detector.model.mc_predict(x, n_passes=detector.n_passes,
                                             rng=rngmod.as_stream(rng))
            prediction = pred
        verdict = detector.decide_from_prediction(pred)
        is_novel = verdict.is_novel
        leader_label = str(verdict.leader_label)
    else:
        is_novel = bool(force_novel)
        leader_label = None

    if not is_novel:
        if leader_label is None:
            pred = prediction
            if pred is None:
                if rng is None:
                    raise ParameterError("gated modes need either a prediction or an rng")
                pred = detector.model.mc_predict(x, n_passes=detector.n_passes,
                                                 rng=rngmod.as_stream(rng))
            from .council import select_leader
            leader_label = str(detector.model.classes_[select_leader(pred.mean)])
        return leader_label
    return zsl_over_unseen()
