"""End-to-end experiment orchestration.

One run trains the stochastic head per split, elects councils on the
holdout, calibrates the rejection threshold against pseudo-novel classes,
scores the test pool once, and derives every configured method's metrics
from that shared scoring pass. Results aggregate as mean and population
standard deviation across splits; a failed split is recorded and skipped
rather than aborting the run. Reports are byte-identical across repeated
runs of the same config and seed.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from .baselines import DiagonalGMM, RbfOneClassSVM, softmax_confidence_scores
from .council import elect_councils, save_council, select_leader
from .data import FeatureDataset, load_features
from .errors import DataError, ParameterError
from .head import MCDropoutClassifier
from .metrics import accuracy, eer, harmonic_mean, pr_auc, roc_auc
from .novelty import VARIANTS, NoveltyDetector, vote_score, write_score_dump
from .numeric import l2_normalize_rows
from .splits import load_splits, make_splits, save_splits
from .zsl import GZSL_MODES, EmbeddingTable, devise_train, gzsl_predict

REPORT_FORMAT_VERSION = 1
CALIBRATION_FORMAT_VERSION = 1

ZSL_METHODS = ("conse", "devise")


@dataclass
class ExperimentConfig:
    """Resolved settings for one experiment run.

    Every field has a default except the two paths, so a report's config
    block always spells out the complete configuration.
    """

    features_path: str
    out_dir: str
    embeddings_path: str = None
    splits_path: str = None
    seed: int = 0
    repetitions: int = 10
    normalize_features: bool = True
    hidden_size: int = 256
    dropout: float = 0.7
    learning_rate: float = 0.005
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 64
    n_passes: int = 100
    credibility: float = 0.001
    variant: str = "informed_democracy"
    pseudo_novel_fraction: float = 0.25
    with_gmm: bool = True
    with_svm: bool = True
    gmm_components: int = 8
    svm_nu: float = 0.1
    svm_gamma: float = None
    with_gzsl: bool = False
    zsl_methods: tuple = ZSL_METHODS
    top_k: int = 10
    ridge: float = 1.0
    save_artifacts: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        unknown = [m for m in self.zsl_methods if m not in ZSL_METHODS]
        if unknown:
            raise ParameterError(f"unknown zsl methods {unknown}, expected from {ZSL_METHODS}")
        self.zsl_methods = tuple(self.zsl_methods)
        if not 0.0 < self.pseudo_novel_fraction < 1.0:
            raise ParameterError(
                f"pseudo_novel_fraction must be in (0, 1), got {self.pseudo_novel_fraction}")
        if self.with_gzsl and not self.embeddings_path:
            raise ParameterError("with_gzsl requires embeddings_path")

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(values) - known)
        if unknown:
            raise ParameterError(f"unknown config keys: {unknown}")
        missing = [k for k in ("features_path", "out_dir") if k not in values]
        if missing:
            raise ParameterError(f"config is missing required keys: {missing}")
        return cls(**values)

    @classmethod
    def from_json(cls, path, overrides: dict = None) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                values = json.load(fh)
        except OSError as exc:
            raise DataError(f"{path}: cannot read config ({exc})") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise DataError(f"{path}: config must be a JSON object")
        if overrides:
            values.update(overrides)
        return cls.from_dict(values)

    def resolved(self) -> dict:
        out = asdict(self)
        out["zsl_methods"] = list(self.zsl_methods)
        return out


# ----------------------------------------------------------------------
def _prepare_dataset(config: ExperimentConfig) -> FeatureDataset:
    ds = load_features(config.features_path)
    if config.normalize_features:
        ds = FeatureDataset(ds.ids, ds.labels, l2_normalize_rows(ds.features),
                            note=ds.note + " (unit rows)")
    return ds


def pick_pseudo_novel(seen_classes, fraction: float, rng) -> list:
    """Seen classes standing in for novel ones during calibration."""
    n_seen = len(seen_classes)
    if n_seen < 2:
        raise DataError("pseudo-novel calibration needs at least 2 seen classes")
    n_pseudo = min(n_seen - 1, max(1, int(round(fraction * n_seen))))
    order = rng.permutation(n_seen)
    return sorted(seen_classes[i] for i in order[:n_pseudo])


def _mc_score_pool(model, features, n_passes, seed):
    """One MC prediction per row from a per-sample child stream."""
    preds = []
    for i, x in enumerate(features):
        preds.append(model.mc_predict(x, n_passes=n_passes,
                                      rng=rngmod.child(seed, "sample", i)))
    return preds


def _variant_scores(preds, councils):
    """Novelty scores for all variants from one shared prediction pass."""
    scores = {variant: np.empty(len(preds)) for variant in VARIANTS}
    leaders = np.empty(len(preds), dtype=np.int64)
    for i, pred in enumerate(preds):
        leader = select_leader(pred.mean)
        leaders[i] = leader
        for variant in VARIANTS:
            scores[variant][i] = vote_score(pred.uncertainty, leader, councils, variant)[0]
    return scores, leaders


def _metric_block(values: list) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std()),
        "values": [float(v) for v in values],
    }


def _aggregate(per_split: list) -> dict:
    """Collapse a list of per-split nested dicts into metric blocks."""
    if not per_split:
        return {}
    first = per_split[0]
    out = {}
    for key, value in first.items():
        if isinstance(value, dict):
            out[key] = _aggregate([d[key] for d in per_split])
        else:
            out[key] = _metric_block([d[key] for d in per_split])
    return out


# ----------------------------------------------------------------------
def run_split(ds: FeatureDataset, split, config: ExperimentConfig,
              table: EmbeddingTable = None, out_dir: str = None) -> dict:
    """Execute one repetition and return its raw per-method metrics."""
    stage = "partition"
    try:
        sub = ds.subset(split.subtrain)
        hold = ds.subset(split.holdout)
        test_seen = ds.subset(split.seen_test)
        pool = ds.subset(split.unseen_pool) if split.unseen_pool.size else None
        if pool is None:
            raise DataError("split has no unseen samples to test against")
        rep = split.repetition

        stage = "train"
        model = MCDropoutClassifier(
            hidden_size=config.hidden_size, dropout=config.dropout,
            learning_rate=config.learning_rate, momentum=config.momentum,
            epochs=config.epochs, batch_size=config.batch_size,
            seed=rngmod.derived_seed(config.seed, "head", rep))
        model.fit(sub.features, sub.labels)

        stage = "elect"
        councils = elect_councils(model, hold.features, hold.labels,
                                  credibility=config.credibility,
                                  n_passes=config.n_passes,
                                  seed=rngmod.derived_seed(config.seed, "elect", rep))

        stage = "calibrate"
        calib_rng = rngmod.child(config.seed, "calibrate", rep)
        pseudo = pick_pseudo_novel(split.seen_classes, config.pseudo_novel_fraction,
                                   calib_rng)
        hold_preds = _mc_score_pool(model, hold.features, config.n_passes,
                                    rngmod.derived_seed(config.seed, "calibrate-mc", rep))
        hold_scores, _ = _variant_scores(hold_preds, councils)
        pseudo_set = set(pseudo)
        hold_flags = np.asarray([lab in pseudo_set for lab in hold.labels])
        taus, calib_rates = {}, {}
        for variant in VARIANTS:
            rate, tau = eer(hold_scores[variant], hold_flags)
            taus[variant] = tau
            calib_rates[variant] = rate

        stage = "score"
        test = test_seen.merge(pool)
        test_flags = np.asarray([lab in set(split.unseen_classes) for lab in test.labels])
        test_preds = _mc_score_pool(model, test.features, config.n_passes,
                                    rngmod.derived_seed(config.seed, "score", rep))
        test_scores, test_leaders = _variant_scores(test_preds, councils)

        stage = "metrics"
        result = {"novelty": {}}
        for variant in VARIANTS:
            scores = test_scores[variant]
            rate, _thr = eer(scores, test_flags)
            result["novelty"][variant] = {
                "roc_auc": roc_auc(scores, test_flags),
                "pr_auc": pr_auc(scores, test_flags),
                "eer": rate,
            }
        soft = softmax_confidence_scores(model, test.features)
        rate, _thr = eer(soft, test_flags)
        result["novelty"]["softmax"] = {
            "roc_auc": roc_auc(soft, test_flags),
            "pr_auc": pr_auc(soft, test_flags),
            "eer": rate,
        }
        closed_preds = model.predict(test_seen.features)
        result["closed_set"] = {
            "accuracy": accuracy(closed_preds, test_seen.labels),
        }

        if config.with_gmm:
            stage = "gmm"
            gmm = DiagonalGMM(n_components=min(config.gmm_components, len(sub)),
                              seed=rngmod.derived_seed(config.seed, "gmm", rep))
            gmm.fit(sub.features)
            gmm_scores = gmm.novelty_score(test.features)
            rate, _thr = eer(gmm_scores, test_flags)
            result["novelty"]["gmm"] = {
                "roc_auc": roc_auc(gmm_scores, test_flags),
                "pr_auc": pr_auc(gmm_scores, test_flags),
                "eer": rate,
            }
        if config.with_svm:
            stage = "svm"
            svm = RbfOneClassSVM(nu=config.svm_nu, gamma=config.svm_gamma)
            svm.fit(sub.features)
            svm_scores = svm.novelty_score(test.features)
            rate, _thr = eer(svm_scores, test_flags)
            result["novelty"]["svm"] = {
                "roc_auc": roc_auc(svm_scores, test_flags),
                "pr_auc": pr_auc(svm_scores, test_flags),
                "eer": rate,
            }

        detector = NoveltyDetector(model, councils, variant=config.variant,
                                   n_passes=config.n_passes, tau=taus[config.variant])

        if config.with_gzsl:
            stage = "gzsl"
            result["gzsl"] = _run_gzsl(config, detector, table, split, test,
                                       test_preds, test_flags, sub)

        if config.save_artifacts and out_dir is not None:
            stage = "artifacts"
            os.makedirs(out_dir, exist_ok=True)
            model.save(os.path.join(out_dir, "checkpoint.npz"))
            save_council(councils, os.path.join(out_dir, "councils.json"))
            calibration = {
                "format_version": CALIBRATION_FORMAT_VERSION,
                "pseudo_novel_classes": pseudo,
                "n_scores": int(len(hold)),
                "taus": {v: taus[v] for v in VARIANTS},
                "holdout_eer": {v: calib_rates[v] for v in VARIANTS},
            }
            with open(os.path.join(out_dir, "calibration.json"), "w", encoding="utf-8") as fh:
                json.dump(calibration, fh, indent=2, sort_keys=True)
                fh.write("\n")
            means = np.vstack([p.mean for p in test_preds])
            uncs = np.vstack([p.uncertainty for p in test_preds])
            leader_labels = [str(model.classes_[i]) for i in test_leaders]
            write_score_dump(os.path.join(out_dir, "scores.csv"), test.ids,
                             test.labels, leader_labels,
                             test_scores[config.variant], means, uncs,
                             [str(c) for c in model.classes_])
        return result
    except Exception as exc:
        raise SplitFailure(stage, exc) from exc


class SplitFailure(Exception):
    """Wraps a stage error so the runner can record where a split died."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _run_gzsl(config, detector, table, split, test, test_preds, test_flags, sub):
    seen = list(split.seen_classes)
    unseen = list(split.unseen_classes)
    top_k = min(config.top_k, len(seen))
    out = {}
    for method in config.zsl_methods:
        projector = None
        if method == "devise":
            projector = devise_train(sub.features, sub.labels, table, ridge=config.ridge)
        rows = {}
        unseen_idx = np.flatnonzero(test_flags)
        for mode in GZSL_MODES:
            if mode == "U+S->U+S":
                sample_idx = np.arange(len(test))
            else:
                sample_idx = unseen_idx
            preds = []
            for i in sample_idx:
                preds.append(gzsl_predict(
                    test.features[i], detector, method, table, seen, unseen,
                    mode=mode, prediction=test_preds[i], top_k=top_k,
                    devise=projector))
            truths = test.labels[sample_idx]
            if mode == "U+S->U+S":
                acc_seen = accuracy(preds, truths, restrict_to=seen)
                acc_unseen = accuracy(preds, truths, restrict_to=unseen)
                rows[mode] = {
                    "accuracy_seen": acc_seen,
                    "accuracy_unseen": acc_unseen,
                    "harmonic_mean": harmonic_mean(acc_seen, acc_unseen),
                }
            else:
                rows[mode] = {"accuracy_unseen": accuracy(preds, truths)}
        out[method] = rows
    return out


# ----------------------------------------------------------------------
def run_experiment(config: ExperimentConfig) -> dict:
    """Run all repetitions, write artifacts and the aggregate report."""
    ds = _prepare_dataset(config)
    if config.splits_path:
        splits = load_splits(config.splits_path, ds.ids)
    else:
        splits = make_splits(ds.labels, config.seed, repetitions=config.repetitions)
    table = EmbeddingTable.load(config.embeddings_path) if config.with_gzsl else None

    os.makedirs(config.out_dir, exist_ok=True)
    if not config.splits_path:
        save_splits(os.path.join(config.out_dir, "splits.json"), splits, ds.ids)

    results, failures = [], []
    for split in splits:
        sub_dir = os.path.join(config.out_dir, f"split_{split.repetition:02d}")
        try:
            results.append(run_split(ds, split, config, table=table, out_dir=sub_dir))
        except SplitFailure as exc:
            failures.append({
                "repetition": split.repetition,
                "stage": exc.stage,
                "error": f"{type(exc.cause).__name__}: {exc.cause}",
            })
    if not results:
        detail = "; ".join(f"rep {f['repetition']} at {f['stage']}: {f['error']}"
                           for f in failures)
        raise DataError(f"every split failed: {detail}")

    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "config": config.resolved(),
        "n_splits_requested": len(splits),
        "n_splits_completed": len(results),
        "partial": bool(failures),
        "failed_splits": failures,
    }
    report.update(_aggregate(results))
    report_path = os.path.join(config.out_dir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
