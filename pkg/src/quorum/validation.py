"""Input validation helpers used at public API boundaries.

Everything numeric inside the package is a float64 ndarray; these helpers
coerce and check shapes once at the edge so the math routines can assume
clean inputs.
"""

import numpy as np

from .errors import DataError, DimensionError


def as_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a non-empty finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name: str = "X") -> np.ndarray:
    """Coerce to a non-empty finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_lengths_match(a, b, name_a: str, name_b: str) -> None:
    if len(a) != len(b):
        raise DimensionError(f"{name_a} has length {len(a)} but {name_b} has length {len(b)}")
