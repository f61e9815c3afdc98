"""Novelty scoring by vote over per-class uncertainties.

Given one input, the head's Monte Carlo passes yield a predictive mean
(whose argmax is the leader) and a per-class uncertainty vector. The
voting variant turns those uncertainties into a single novelty score:

- informed_democracy: mean uncertainty over the leader's elected council
- uninformed_democracy: mean uncertainty over every class, leader included
- dictator: the leader's own uncertainty

Scores are compared against a calibrated threshold tau; a score at or
above tau means novel, strictly below means known with the leader's label.
An empty council falls back to the dictator value and says so.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .council import CouncilTable, select_leader
from .errors import DataError, DimensionError, ParameterError
from .head import MCPrediction
from .metrics import eer

VARIANTS = ("informed_democracy", "uninformed_democracy", "dictator")

SCORES_FORMAT_LINE = "# scores v1"


def vote_score(uncertainty, leader: int, councils: CouncilTable, variant: str):
    """Reduce a per-class uncertainty vector to a novelty score.

    Returns (score, council_size, used_fallback). Member order cannot
    affect the result: the council is averaged in sorted index order.
    """
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    u = np.asarray(uncertainty, dtype=np.float64)
    if u.ndim != 1 or u.size == 0:
        raise DimensionError("uncertainty must be a non-empty vector")
    if not 0 <= leader < u.size:
        raise ParameterError(f"leader index {leader} out of range for {u.size} classes")

    if variant == "dictator":
        return float(u[leader]), 1, False
    if variant == "uninformed_democracy":
        return float(np.mean(u)), u.size, False
    members = sorted(councils.members[leader])
    if not members:
        # no council to poll: fall back to the leader's own uncertainty
        return float(u[leader]), 0, True
    return float(np.mean(u[members])), len(members), False


def calibrate_tau(scores, flags) -> float:
    """Threshold where false-positive and false-negative rates meet."""
    _, threshold = eer(scores, flags)
    return threshold


@dataclass
class NoveltyVerdict:
    """Outcome of one thresholded novelty decision."""

    score: float
    leader: int
    leader_label: object
    is_novel: bool
    threshold: float
    council_size: int
    used_fallback: bool


class NoveltyDetector:
    """Scores and thresholds novelty for a fitted head plus its councils.

    Parameters
    ----------
    model : MCDropoutClassifier
        A fitted head.
    councils : CouncilTable
        Election result for the same classes as the model.
    variant : str, default="informed_democracy"
        One of informed_democracy, uninformed_democracy, dictator.
    n_passes : int, default=100
        Stochastic passes per scored sample.
    tau : float or None
        Decision threshold; set directly or via calibrate().
    per_leader_tau : dict or None
        Optional per-leader thresholds keyed by leader index; any leader
        without an entry uses the global tau. Off by default.
    """

    def __init__(self, model, councils, variant="informed_democracy",
                 n_passes=100, tau=None, per_leader_tau=None):
        if variant not in VARIANTS:
            raise ParameterError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        if n_passes < 2:
            raise ParameterError(f"n_passes must be >= 2, got {n_passes}")
        if list(councils.class_labels) != list(model.classes_):
            raise ParameterError("council table and model disagree on class labels")
        self.model = model
        self.councils = councils
        self.variant = variant
        self.n_passes = int(n_passes)
        self.tau = tau
        self.per_leader_tau = per_leader_tau

    # ------------------------------------------------------------------
    def score_from_prediction(self, pred: MCPrediction):
        """(score, leader, council_size, used_fallback) for a ready prediction."""
        leader = select_leader(pred.mean)
        score, size, fallback = vote_score(pred.uncertainty, leader, self.councils, self.variant)
        return score, leader, size, fallback

    def novelty_score(self, x, rng):
        """Score one sample; returns (score, leader, MCPrediction)."""
        pred = self.model.mc_predict(x, n_passes=self.n_passes, rng=rngmod.as_stream(rng))
        score, leader, _, _ = self.score_from_prediction(pred)
        return score, leader, pred

    def calibrate(self, scores, flags) -> float:
        """Set tau at the equal-error point of labeled scores."""
        self.tau = calibrate_tau(scores, flags)
        return self.tau

    def threshold_for(self, leader: int) -> float:
        if self.per_leader_tau is not None and leader in self.per_leader_tau:
            return float(self.per_leader_tau[leader])
        if self.tau is None:
            raise ParameterError("detector has no threshold; call calibrate() or set tau")
        return float(self.tau)

    def decide(self, x, rng) -> NoveltyVerdict:
        """Threshold one sample: known iff score < tau, novel otherwise."""
        pred = self.model.mc_predict(x, n_passes=self.n_passes, rng=rngmod.as_stream(rng))
        return self.decide_from_prediction(pred)

    def decide_from_prediction(self, pred: MCPrediction) -> NoveltyVerdict:
        score, leader, size, fallback = self.score_from_prediction(pred)
        threshold = self.threshold_for(leader)
        return NoveltyVerdict(
            score=score,
            leader=leader,
            leader_label=self.model.classes_[leader],
            is_novel=not score < threshold,
            threshold=threshold,
            council_size=size,
            used_fallback=fallback,
        )


# ----------------------------------------------------------------------
def _check_label_text(label) -> str:
    text = str(label)
    if "," in text or "\n" in text or "\r" in text:
        raise DataError(f"label {text!r} contains a comma or newline and cannot be written to CSV")
    return text


def write_score_dump(path, ids, true_labels, leader_labels, scores, means, uncertainties,
                     class_labels) -> None:
    """Dump per-sample scores with full per-class evidence as versioned CSV."""
    means = np.asarray(means, dtype=np.float64)
    uncertainties = np.asarray(uncertainties, dtype=np.float64)
    k = len(class_labels)
    if means.shape != (len(ids), k) or uncertainties.shape != (len(ids), k):
        raise DimensionError("means and uncertainties must be (n_samples, n_classes)")
    names = [_check_label_text(lab) for lab in class_labels]
    header = (["id", "true_label", "leader", "score"]
              + [f"mean:{lab}" for lab in names]
              + [f"unc:{lab}" for lab in names])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SCORES_FORMAT_LINE + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(ids)):
            row = [_check_label_text(ids[i]), _check_label_text(true_labels[i]),
                   _check_label_text(leader_labels[i]), repr(float(scores[i]))]
            row += [repr(float(v)) for v in means[i]]
            row += [repr(float(v)) for v in uncertainties[i]]
            writer.writerow(row)


def load_score_dump(path):
    """Read a score dump back; returns a dict of columns."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline().rstrip("\n")
            if first != SCORES_FORMAT_LINE:
                raise DataError(f"{path}: unsupported score dump format line {first!r}")
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:4] != ["id", "true_label", "leader", "score"]:
                raise DataError(f"{path}: malformed score dump header")
            k = (len(header) - 4) // 2
            class_labels = [name[len("mean:"):] for name in header[4:4 + k]]
            ids, truths, leaders, scores = [], [], [], []
            means, uncs = [], []
            for line_no, row in enumerate(reader, start=3):
                if len(row) != len(header):
                    raise DataError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
                ids.append(row[0])
                truths.append(row[1])
                leaders.append(row[2])
                scores.append(float(row[3]))
                means.append([float(v) for v in row[4:4 + k]])
                uncs.append([float(v) for v in row[4 + k:]])
    except OSError as exc:
        raise DataError(f"{path}: cannot read score dump ({exc})") from exc
    return {
        "ids": ids,
        "true_labels": truths,
        "leader_labels": leaders,
        "scores": np.array(scores),
        "means": np.array(means),
        "uncertainties": np.array(uncs),
        "class_labels": class_labels,
    }
