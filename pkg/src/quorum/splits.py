"""Repeated dataset splitting for open-set evaluation.

Classes are split evenly into seen and unseen, with seen taking the extra
class when the count is odd. Samples of each seen class are partitioned
70/30 into train and test with floor rounding, and the train part is
partitioned again 90/10 into subtrain and holdout. Samples of unseen
classes all land in a single unseen pool. Every repetition reshuffles both
levels from its own child stream, so the list of splits is deterministic
per seed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import DataError, DimensionError, ParameterError

SPLIT_FORMAT_VERSION = 1


@dataclass
class SplitSpec:
    """Index-based partition of one repetition.

    All index arrays refer to positions in the label list given to
    make_splits: subtrain and holdout partition the train part of each
    seen class, seen_test holds the remaining seen-class samples, and
    unseen_pool holds every sample of an unseen class.
    """

    repetition: int
    seen_classes: list
    unseen_classes: list
    subtrain: np.ndarray
    holdout: np.ndarray
    seen_test: np.ndarray
    unseen_pool: np.ndarray

    def all_indices(self) -> np.ndarray:
        return np.concatenate([self.subtrain, self.holdout, self.seen_test,
                               self.unseen_pool])


def _class_partition(indices: np.ndarray, rng) -> tuple:
    """Shuffle one seen class and cut it into subtrain/holdout/test."""
    order = rng.permutation(indices.size)
    shuffled = indices[order]
    n = indices.size
    n_train = int(np.floor(0.7 * n))
    n_sub = int(np.floor(0.9 * n_train))
    return shuffled[:n_sub], shuffled[n_sub:n_train], shuffled[n_train:]


def make_splits(labels, seed: int, repetitions: int = 10, seen_classes=None) -> list:
    """Generate the repeated splits for a label list.

    seen_classes pins the seen side across repetitions instead of
    reshuffling the class split; sample-level shuffles still vary.
    """
    if repetitions < 1:
        raise ParameterError(f"repetitions must be >= 1, got {repetitions}")
    labels = np.asarray([str(lab) for lab in labels])
    if labels.size == 0:
        raise DimensionError("label list is empty")
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise DataError("need at least 2 classes to split")
    counts = {lab: int(np.sum(labels == lab)) for lab in classes}
    small = sorted(lab for lab, n in counts.items() if n < 4)
    if small:
        raise DataError(f"classes with fewer than 4 samples cannot be partitioned: {small}")

    if seen_classes is not None:
        seen_fixed = sorted(str(lab) for lab in seen_classes)
        unknown = sorted(set(seen_fixed) - set(classes))
        if unknown:
            raise DataError(f"seen classes not present in the data: {unknown}")
        if len(seen_fixed) != len(set(seen_fixed)):
            raise DataError("seen class list contains duplicates")
        if len(seen_fixed) < 2:
            raise ParameterError("need at least 2 seen classes")
        if len(seen_fixed) == len(classes):
            raise ParameterError("at least one class must remain unseen")

    by_class = {lab: np.flatnonzero(labels == lab) for lab in classes}
    splits = []
    for rep in range(repetitions):
        rng = rngmod.child(seed, "split", rep)
        if seen_classes is None:
            order = rng.permutation(len(classes))
            n_seen = (len(classes) + 1) // 2
            seen = sorted(classes[i] for i in order[:n_seen])
            unseen = sorted(classes[i] for i in order[n_seen:])
        else:
            seen = list(seen_fixed)
            unseen = sorted(set(classes) - set(seen))
        sub_parts, hold_parts, test_parts = [], [], []
        for lab in seen:
            sub, hold, test = _class_partition(by_class[lab], rng)
            sub_parts.append(sub)
            hold_parts.append(hold)
            test_parts.append(test)
        pool = [by_class[lab] for lab in unseen]
        splits.append(SplitSpec(
            repetition=rep,
            seen_classes=seen,
            unseen_classes=unseen,
            subtrain=np.sort(np.concatenate(sub_parts)),
            holdout=np.sort(np.concatenate(hold_parts)),
            seen_test=np.sort(np.concatenate(test_parts)),
            unseen_pool=np.sort(np.concatenate(pool)) if pool else np.array([], dtype=np.int64),
        ))
    return splits


# ----------------------------------------------------------------------
def save_splits(path, splits, ids) -> None:
    """Write splits as JSON, mapping indices to stable sample ids."""
    ids = [str(i) for i in ids]
    payload = {
        "format_version": SPLIT_FORMAT_VERSION,
        "splits": [
            {
                "repetition": s.repetition,
                "seen_classes": list(s.seen_classes),
                "unseen_classes": list(s.unseen_classes),
                "subtrain": [ids[i] for i in s.subtrain],
                "holdout": [ids[i] for i in s.holdout],
                "seen_test": [ids[i] for i in s.seen_test],
                "unseen_pool": [ids[i] for i in s.unseen_pool],
            }
            for s in splits
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_splits(path, ids) -> list:
    """Read a split file back into index arrays against the given ids."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read splits ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    version = payload.get("format_version")
    if version != SPLIT_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported split format version {version!r}")
    lookup = {str(sample_id): idx for idx, sample_id in enumerate(ids)}

    def to_indices(id_list):
        missing = [s for s in id_list if s not in lookup]
        if missing:
            raise DataError(f"{path}: split references unknown sample ids {missing[:5]}")
        return np.asarray([lookup[s] for s in id_list], dtype=np.int64)

    splits = []
    for entry in payload.get("splits", []):
        splits.append(SplitSpec(
            repetition=int(entry["repetition"]),
            seen_classes=[str(c) for c in entry["seen_classes"]],
            unseen_classes=[str(c) for c in entry["unseen_classes"]],
            subtrain=to_indices(entry["subtrain"]),
            holdout=to_indices(entry["holdout"]),
            seen_test=to_indices(entry["seen_test"]),
            unseen_pool=to_indices(entry["unseen_pool"]),
        ))
    return splits
