"""Seeded random streams with reproducible child derivation.

All randomness in the package flows through numpy Generators built from
explicit integer seeds. A child stream is derived from (seed, label, ...)
so that independent pieces of work (one stochastic pass per sample, one
shuffle per epoch) can each own a stream that does not depend on how many
draws any other piece consumed. Identical seeds reproduce identical draw
sequences across runs and platforms.
"""

import hashlib

import numpy as np

from .errors import ParameterError


def _key(label) -> int:
    """Map an arbitrary label to a stable non-negative 64-bit integer."""
    if isinstance(label, (bool, float)):
        raise ParameterError(f"stream labels must be ints or strings, got {label!r}")
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ParameterError(f"integer stream labels must be >= 0, got {label}")
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# SeedSequence treats trailing zero entropy words as absent, so every child
# entropy list ends in this non-zero sentinel; distinct label paths then
# always produce distinct entropy.
_SENTINEL = 0x9E3779B97F4A7C15


def stream(seed: int) -> np.random.Generator:
    """Root stream for a seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def child(seed: int, *labels) -> np.random.Generator:
    """Stream derived from a seed and a path of labels.

    Distinct label paths give statistically independent streams; the same
    path always gives the same stream.
    """
    if not labels:
        return stream(seed)
    entropy = [int(seed)] + [_key(lab) for lab in labels] + [_SENTINEL]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derived_seed(seed: int, *labels) -> int:
    """Plain integer seed derived from a label path.

    For components that take an integer seed rather than a Generator.
    """
    return int(child(seed, *labels).integers(0, 2**63))


def as_stream(rng) -> np.random.Generator:
    """Accept either a ready Generator or a plain integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return stream(int(rng))
    raise ParameterError(f"expected a numpy Generator or an integer seed, got {type(rng).__name__}")
