"""Detection and classification metrics.

Novelty scores follow the convention higher = more novel, and the novel
flag is the positive class. Ties in score are processed as a block, which
makes both AUCs deterministic and lets the trapezoidal ROC area agree
exactly with tie-corrected pair counting.
"""

import numpy as np

from .errors import CalibrationError, DimensionError, ParameterError
from .validation import check_lengths_match


def _check_scores(scores, flags):
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if scores.ndim != 1 or flags.ndim != 1:
        raise DimensionError("scores and flags must be 1-D")
    check_lengths_match(scores, flags, "scores", "flags")
    if scores.size == 0:
        raise DimensionError("scores is empty")
    if not np.all(np.isfinite(scores)):
        raise CalibrationError("scores contain non-finite values")
    if not flags.any() or flags.all():
        raise CalibrationError("need at least one novel and one known score")
    return scores, flags


def roc_auc(scores, flags) -> float:
    """Area under the ROC curve, novel flagged scores as positives.

    Computed by a single sorted sweep with trapezoidal integration; tie
    blocks move diagonally, so equal scores contribute half credit. Counts
    are accumulated as integers and normalized once, which keeps the value
    exactly equal to pair counting P(novel > known) + 0.5 P(novel = known).
    """
    scores, flags = _check_scores(scores, flags)
    n_pos = int(flags.sum())
    n_neg = flags.size - n_pos

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_flags = flags[order]

    area2 = 0  # twice the unnormalized area, an exact integer
    tp = 0
    fp = 0
    i = 0
    while i < sorted_scores.size:
        j = i
        while j < sorted_scores.size and sorted_scores[j] == sorted_scores[i]:
            j += 1
        block_tp = int(sorted_flags[i:j].sum())
        block_fp = (j - i) - block_tp
        # trapezoid over the block: width block_fp, heights tp and tp + block_tp
        area2 += block_fp * (2 * tp + block_tp)
        tp += block_tp
        fp += block_fp
        i = j
    return area2 / (2.0 * n_pos * n_neg)


def pr_auc(scores, flags) -> float:
    """Average precision with the novel flag as the positive class.

    Ranked by descending score; a tie block contributes its recall mass at
    the precision measured at the end of the block.
    """
    scores, flags = _check_scores(scores, flags)
    n_pos = int(flags.sum())

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_flags = flags[order]

    # accumulate integer-weighted terms and divide once at the end, so a
    # perfect ranking comes out as exactly 1.0
    weighted = 0.0
    tp = 0
    seen = 0
    i = 0
    while i < sorted_scores.size:
        j = i
        while j < sorted_scores.size and sorted_scores[j] == sorted_scores[i]:
            j += 1
        block_tp = int(sorted_flags[i:j].sum())
        tp += block_tp
        seen += j - i
        if block_tp:
            precision = tp / seen
            weighted += precision * block_tp
        i = j
    return weighted / n_pos


def eer(scores, flags) -> tuple[float, float]:
    """Equal error rate and the threshold that attains it.

    The decision rule is novel iff score >= threshold. Candidate thresholds
    are the midpoints between consecutive distinct scores plus one sentinel
    below the minimum and one above the maximum; FPR - FNR changes sign
    along that scan, and the crossing is located by linear interpolation
    between the two bracketing candidates. Returns (rate, threshold).
    """
    scores, flags = _check_scores(scores, flags)
    n_pos = int(flags.sum())
    n_neg = flags.size - n_pos

    distinct = np.unique(scores)
    span = float(distinct[-1] - distinct[0])
    pad = span / 2.0 if span > 0.0 else 1.0
    candidates = np.concatenate((
        [distinct[0] - pad],
        (distinct[:-1] + distinct[1:]) / 2.0,
        [distinct[-1] + pad],
    ))

    known_sorted = np.sort(scores[~flags])
    novel_sorted = np.sort(scores[flags])
    # searchsorted(left) counts entries < t, so FPR = (# known >= t) / n_neg
    fpr = (n_neg - np.searchsorted(known_sorted, candidates, side="left")) / n_neg
    fnr = np.searchsorted(novel_sorted, candidates, side="left") / n_pos
    gap = fpr - fnr
    # gap starts at +1, ends at -1; find the first candidate past the crossing
    k = int(np.argmax(gap < 0.0))
    g_lo, g_hi = gap[k - 1], gap[k]
    frac = g_lo / (g_lo - g_hi)
    threshold = float(candidates[k - 1] + frac * (candidates[k] - candidates[k - 1]))
    rate = float(fpr[k - 1] + frac * (fpr[k] - fpr[k - 1]))
    return rate, threshold


def accuracy(predictions, truths, restrict_to=None) -> float:
    """Fraction of correct predictions, optionally over a subset of truths.

    restrict_to limits scoring to samples whose true label is in the given
    set; an empty restriction is an error.
    """
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    check_lengths_match(predictions, truths, "predictions", "truths")
    if predictions.size == 0:
        raise DimensionError("no predictions to score")
    if restrict_to is not None:
        keep = np.isin(truths, list(restrict_to))
        if not keep.any():
            raise ParameterError("restriction matches no samples")
        predictions = predictions[keep]
        truths = truths[keep]
    return float(np.mean(predictions == truths))


def harmonic_mean(a: float, b: float) -> float:
    """Harmonic mean of two non-negative rates; 0 if either is 0."""
    if a < 0.0 or b < 0.0:
        raise ParameterError(f"rates must be >= 0, got {a} and {b}")
    if a == 0.0 or b == 0.0:
        return 0.0
    return 2.0 * a * b / (a + b)
