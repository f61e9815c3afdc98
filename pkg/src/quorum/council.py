"""Electing per-leader councils from holdout uncertainty statistics.

For every class i, the holdout samples that the head classifies correctly
as i form its true-positive set. Over that set, the variance of each other
classifier's uncertainty measures how steadily that classifier behaves
when i is the right answer; classifiers whose variance stays below the
credibility threshold win a seat on class i's council. A class with fewer
than two true positives cannot support a variance estimate, so it is
flagged and receives the full complement of other classifiers instead.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import DataError, DimensionError, ParameterError
from .validation import as_matrix, check_lengths_match

COUNCIL_FORMAT_VERSION = 1


def select_leader(mean_probs) -> int:
    """Index of the highest predictive mean; ties go to the lowest index."""
    arr = np.asarray(mean_probs, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError("mean_probs must be a non-empty vector")
    return int(np.argmax(arr))


def uncertainty_variance(values) -> float:
    """Population variance (divisor N) of a set of uncertainty values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError("values must be 1-D")
    if arr.size == 0:
        raise DimensionError("variance of an empty set is undefined")
    return float(np.mean((arr - np.mean(arr)) ** 2))


def council_members(variance_row, leader: int, credibility: float) -> list[int]:
    """Membership rule: every j != leader with variance strictly below c."""
    row = np.asarray(variance_row, dtype=np.float64)
    return [j for j in range(row.size) if j != leader and row[j] < credibility]


@dataclass(eq=False)
class CouncilTable:
    """Election result for every class of a fitted head.

    members maps each leader index to the sorted member indices of its
    council. variance[i, j] is the variance of classifier j's uncertainty
    over leader i's true-positive set (0 where no set exists). tp_counts
    holds the true-positive set sizes, and flagged collects the leaders
    whose set was too small to elect from (they received every other
    classifier). evidence keeps the per-sample uncertainty vectors behind
    each variance row; it is runtime-only and not serialized.
    """

    credibility_threshold: float
    class_labels: list
    members: dict
    variance: np.ndarray
    tp_counts: np.ndarray
    flagged: set
    evidence: dict = field(default=None, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)


def _holdout_predictions(model, X, n_passes, seed):
    """One mc_predict per holdout row, each on its own child stream."""
    return [
        model.mc_predict(X[i], n_passes=n_passes, rng=rngmod.child(seed, "sample", i))
        for i in range(X.shape[0])
    ]


def _label_indices(model, y):
    table = {lab: i for i, lab in enumerate(model.classes_)}
    try:
        return np.array([table[lab] for lab in y], dtype=np.intp)
    except KeyError as exc:
        raise DataError(f"holdout label {exc.args[0]!r} is not a class of the model") from exc


def _tp_sets(y_idx, predictions, n_classes):
    sets = {i: [] for i in range(n_classes)}
    for row, pred in enumerate(predictions):
        if select_leader(pred.mean) == y_idx[row]:
            sets[int(y_idx[row])].append(row)
    return sets


def build_true_positive_sets(model, X, y, n_passes=100, seed=0) -> dict:
    """Map class index -> holdout rows the head gets right for that class.

    Deterministic in (model, X, y, n_passes, seed); each row's passes come
    from a child stream keyed by its position, so the result does not
    depend on evaluation order.
    """
    X = as_matrix(X, "holdout features")
    y = np.asarray(y)
    check_lengths_match(X, y, "holdout features", "holdout labels")
    y_idx = _label_indices(model, y)
    predictions = _holdout_predictions(model, X, n_passes, seed)
    return _tp_sets(y_idx, predictions, len(model.classes_))


def elect_councils(model, X, y, credibility=0.001, n_passes=100, seed=0) -> CouncilTable:
    """Run the election for every class against a labeled holdout set."""
    if not credibility > 0.0:
        raise ParameterError(f"credibility threshold must be > 0, got {credibility}")
    if n_passes < 2:
        raise ParameterError(f"n_passes must be >= 2, got {n_passes}")
    X = as_matrix(X, "holdout features")
    y = np.asarray(y)
    check_lengths_match(X, y, "holdout features", "holdout labels")
    y_idx = _label_indices(model, y)

    k = len(model.classes_)
    predictions = _holdout_predictions(model, X, n_passes, seed)
    tp = _tp_sets(y_idx, predictions, k)

    variance = np.zeros((k, k))
    tp_counts = np.zeros(k, dtype=np.intp)
    members = {}
    flagged = set()
    evidence = {}
    for i in range(k):
        rows = tp[i]
        tp_counts[i] = len(rows)
        uncert = np.stack([predictions[r].uncertainty for r in rows]) if rows else np.zeros((0, k))
        evidence[i] = uncert
        if rows:
            for j in range(k):
                variance[i, j] = uncertainty_variance(uncert[:, j])
        if len(rows) < 2:
            flagged.add(i)
            members[i] = [j for j in range(k) if j != i]
        else:
            members[i] = council_members(variance[i], i, credibility)

    return CouncilTable(
        credibility_threshold=float(credibility),
        class_labels=list(model.classes_),
        members=members,
        variance=variance,
        tp_counts=tp_counts,
        flagged=flagged,
        evidence=evidence,
    )


# ----------------------------------------------------------------------
def save_council(table: CouncilTable, path) -> None:
    """Write the election result as a versioned JSON document."""
    records = []
    for i, label in enumerate(table.class_labels):
        records.append({
            "label": str(label),
            "members": [str(table.class_labels[j]) for j in table.members[i]],
            "variance": [float(v) for v in table.variance[i]],
            "tp_count": int(table.tp_counts[i]),
            "flagged": i in table.flagged,
        })
    doc = {
        "format_version": COUNCIL_FORMAT_VERSION,
        "credibility_threshold": float(table.credibility_threshold),
        "class_labels": [str(lab) for lab in table.class_labels],
        "councils": records,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_council(path) -> CouncilTable:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read council file ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid council file ({exc})") from exc
    if doc.get("format_version") != COUNCIL_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported council format {doc.get('format_version')!r}")
    labels = doc["class_labels"]
    index = {lab: i for i, lab in enumerate(labels)}
    k = len(labels)
    variance = np.zeros((k, k))
    tp_counts = np.zeros(k, dtype=np.intp)
    members = {}
    flagged = set()
    if len(doc["councils"]) != k:
        raise DataError(f"{path}: expected {k} council records, got {len(doc['councils'])}")
    for record in doc["councils"]:
        i = index[record["label"]]
        members[i] = sorted(index[lab] for lab in record["members"])
        variance[i] = record["variance"]
        tp_counts[i] = record["tp_count"]
        if record["flagged"]:
            flagged.add(i)
    return CouncilTable(
        credibility_threshold=float(doc["credibility_threshold"]),
        class_labels=list(labels),
        members=members,
        variance=variance,
        tp_counts=tp_counts,
        flagged=flagged,
        evidence=None,
    )
