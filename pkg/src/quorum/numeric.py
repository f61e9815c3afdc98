"""Small numeric kernels shared by the classifier head and the voting layer.

All routines work in float64 and are written so that no NaN or Inf can
escape for finite inputs: softmax is max-shifted, variances come from a
streaming accumulator whose terms are non-negative by construction.
"""

import numpy as np

from .errors import DimensionError, ParameterError
from .validation import as_vector


def softmax(z) -> np.ndarray:
    """Numerically stable softmax of a 1-D score vector.

    The maximum is subtracted before exponentiating, so arbitrarily large
    scores cannot overflow; entries sum to 1 up to float rounding.
    """
    z = as_vector(z, "softmax input")
    shifted = z - np.max(z)
    e = np.exp(shifted)
    return e / np.sum(e)


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax for a 2-D score array."""
    if Z.ndim != 2:
        raise DimensionError(f"expected 2-D scores, got shape {Z.shape}")
    shifted = Z - np.max(Z, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def sample_dropout_mask(dim: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a binary keep-mask of length dim; each unit is dropped with rate p.

    p = 0 returns the identity mask (while still consuming dim draws, so a
    stream's position does not depend on the rate).
    """
    if dim < 1:
        raise DimensionError(f"mask dimension must be >= 1, got {dim}")
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {p}")
    return (rng.random(dim) < 1.0 - p).astype(np.float64)


def column_mean_variance(samples) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and sample variance (divisor M - 1) of an M x K matrix.

    Uses a streaming one-pass accumulator; each variance update term is a
    product of two factors with the same sign, so the result is >= 0 even
    in floating point. Requires M >= 2.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected an M x K sample matrix, got shape {arr.shape}")
    m, k = arr.shape
    if m < 2:
        raise DimensionError(f"need at least 2 sample rows for a variance, got {m}")
    mean = np.zeros(k)
    msq = np.zeros(k)
    for i in range(m):
        delta = arr[i] - mean
        mean += delta / (i + 1)
        msq += delta * (arr[i] - mean)
    return mean, msq / (m - 1)


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm; a zero vector is returned unchanged."""
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        return x
    return x / norm


def l2_normalize_rows(X: np.ndarray) -> np.ndarray:
    """Row-wise unit L2 normalization; zero rows are left as zeros."""
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms == 0.0, 1.0, norms)
