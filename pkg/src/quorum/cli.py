"""Command-line interface.

Subcommands cover the pipeline stage by stage (synth, split, train, elect,
calibrate, score, eval-novelty, eval-gzsl, baseline) plus `run`, which
executes the whole protocol from a config file. Global flags --config,
--seed and --out apply to every subcommand; explicit flags win over config
file values, which win over built-in defaults.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import rng as rngmod
from .baselines import DiagonalGMM, RbfOneClassSVM, softmax_confidence_scores
from .council import elect_councils, load_council, save_council
from .data import (FeatureDataset, generate_synthetic, load_features,
                   save_features, synthetic_embeddings)
from .errors import (DataError, DimensionError, NumericalError, ParameterError)
from .experiment import (CALIBRATION_FORMAT_VERSION, ExperimentConfig,
                         pick_pseudo_novel, run_experiment)
from .head import MCDropoutClassifier
from .metrics import accuracy, eer, harmonic_mean, pr_auc, roc_auc
from .novelty import (VARIANTS, NoveltyDetector, load_score_dump,
                      write_score_dump)
from .numeric import l2_normalize_rows
from .splits import load_splits, make_splits, save_splits
from .zsl import GZSL_MODES, EmbeddingTable, devise_train, gzsl_predict


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as exc:
        raise ParameterError(f"{path}: cannot read config ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(values, dict):
        raise ParameterError(f"{path}: config must be a JSON object")
    return values


class _Resolver:
    """Precedence: explicit CLI flag > config file value > default."""

    def __init__(self, args, config):
        self.args = args
        self.config = config

    def get(self, key, default=None, required=False):
        value = getattr(self.args, key.replace("-", "_"), None)
        if value is None:
            value = self.config.get(key, default)
        if value is None and required:
            raise ParameterError(f"missing required setting {key!r} "
                                 f"(flag --{key.replace('_', '-')} or config key)")
        return value

    def out(self, required=True):
        value = (getattr(self.args, "out", None) or self.config.get("out")
                 or self.config.get("out_dir"))
        if value is None and required:
            raise ParameterError("missing output path (--out)")
        return value

    def seed(self):
        value = getattr(self.args, "seed", None)
        if value is None:
            value = self.config.get("seed", 0)
        return int(value)


def _load_split(res, ds):
    splits_path = res.get("splits", required=True)
    splits = load_splits(splits_path, ds.ids)
    rep = int(res.get("rep", 0))
    match = [s for s in splits if s.repetition == rep]
    if not match:
        raise ParameterError(f"{splits_path} has no repetition {rep}")
    return match[0]


def _load_dataset(res) -> FeatureDataset:
    ds = load_features(res.get("features", required=True))
    if not res.get("raw_features", False):
        ds = FeatureDataset(ds.ids, ds.labels, l2_normalize_rows(ds.features),
                            note=ds.note + " (unit rows)")
    return ds


def _emit(payload: dict, out_path=None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _mc_pool(model, features, n_passes, seed):
    return [model.mc_predict(x, n_passes=n_passes,
                             rng=rngmod.child(seed, "sample", i))
            for i, x in enumerate(features)]


def _novelty_metrics(scores, flags) -> dict:
    rate, threshold = eer(scores, flags)
    return {
        "roc_auc": roc_auc(scores, flags),
        "pr_auc": pr_auc(scores, flags),
        "eer": rate,
        "eer_threshold": threshold,
        "n_known": int(np.sum(~np.asarray(flags))),
        "n_novel": int(np.sum(np.asarray(flags))),
    }


# ----------------------------------------------------------------------
def _cmd_synth(res):
    out_dir = res.out()
    os.makedirs(out_dir, exist_ok=True)
    seed = res.seed()
    seen, novel = generate_synthetic(
        n_classes=int(res.get("classes", 8)),
        n_novel=int(res.get("novel", 4)),
        samples_per_class=int(res.get("samples", 150)),
        dim=int(res.get("dim", 64)),
        separation=float(res.get("separation", 6.0)),
        noise=float(res.get("noise", 1.0)),
        displacement=float(res.get("displacement", 8.0)),
        seed=seed)
    ds = seen.merge(novel) if novel is not None else seen
    features_path = os.path.join(out_dir, "features.csv")
    save_features(features_path, ds)
    table = EmbeddingTable(synthetic_embeddings(
        ds.classes(), dim=int(res.get("embedding_dim", 32)), seed=seed))
    embeddings_path = os.path.join(out_dir, "embeddings.txt")
    table.save(embeddings_path)
    classes_path = os.path.join(out_dir, "classes.json")
    with open(classes_path, "w", encoding="utf-8") as fh:
        json.dump({"seen": seen.classes(),
                   "novel": novel.classes() if novel is not None else []},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {features_path} ({len(ds)} samples, dim {ds.dim}), "
          f"{embeddings_path}, {classes_path}")
    return 0


def _cmd_split(res):
    ds = load_features(res.get("features", required=True))
    seen = res.get("seen")
    if isinstance(seen, str):
        seen = [s for s in seen.split(",") if s]
    splits = make_splits(ds.labels, res.seed(),
                         repetitions=int(res.get("repetitions", 10)),
                         seen_classes=seen)
    out = res.out()
    save_splits(out, splits, ds.ids)
    print(f"wrote {out} ({len(splits)} repetitions, "
          f"{len(splits[0].seen_classes)} seen / {len(splits[0].unseen_classes)} unseen classes)")
    return 0


def _cmd_train(res):
    ds = _load_dataset(res)
    split = _load_split(res, ds)
    sub = ds.subset(split.subtrain)
    seed = res.seed()
    model = MCDropoutClassifier(
        hidden_size=int(res.get("hidden_size", 256)),
        dropout=float(res.get("dropout", 0.7)),
        learning_rate=float(res.get("learning_rate", 0.005)),
        momentum=float(res.get("momentum", 0.9)),
        epochs=int(res.get("epochs", 100)),
        batch_size=int(res.get("batch_size", 64)),
        seed=rngmod.derived_seed(seed, "head", split.repetition))
    model.fit(sub.features, sub.labels)
    out = res.out()
    model.save(out)
    print(f"wrote {out} ({len(model.classes_)} classes, "
          f"final loss {model.loss_history_[-1]:.4f})")
    return 0


def _cmd_elect(res):
    ds = _load_dataset(res)
    split = _load_split(res, ds)
    model = MCDropoutClassifier.load(res.get("checkpoint", required=True))
    hold = ds.subset(split.holdout)
    seed = res.seed()
    councils = elect_councils(model, hold.features, hold.labels,
                              credibility=float(res.get("credibility", 0.001)),
                              n_passes=int(res.get("passes", 100)),
                              seed=rngmod.derived_seed(seed, "elect", split.repetition))
    out = res.out()
    save_council(councils, out)
    flagged = sorted(councils.flagged)
    print(f"wrote {out} ({len(councils.class_labels)} leaders, "
          f"{len(flagged)} flagged)")
    return 0


def _cmd_calibrate(res):
    ds = _load_dataset(res)
    split = _load_split(res, ds)
    model = MCDropoutClassifier.load(res.get("checkpoint", required=True))
    councils = load_council(res.get("councils", required=True))
    hold = ds.subset(split.holdout)
    seed = res.seed()
    rep = split.repetition
    n_passes = int(res.get("passes", 100))
    pseudo = pick_pseudo_novel(split.seen_classes,
                               float(res.get("pseudo_fraction", 0.25)),
                               rngmod.child(seed, "calibrate", rep))
    preds = _mc_pool(model, hold.features, n_passes,
                     rngmod.derived_seed(seed, "calibrate-mc", rep))
    pseudo_set = set(pseudo)
    flags = np.asarray([lab in pseudo_set for lab in hold.labels])
    detector_rows = {}
    for variant in VARIANTS:
        detector = NoveltyDetector(model, councils, variant=variant, n_passes=n_passes)
        scores = np.asarray([detector.score_from_prediction(pred)[0] for pred in preds])
        rate, tau = eer(scores, flags)
        detector_rows[variant] = (tau, rate)
    payload = {
        "format_version": CALIBRATION_FORMAT_VERSION,
        "pseudo_novel_classes": pseudo,
        "n_scores": int(len(hold)),
        "taus": {v: detector_rows[v][0] for v in VARIANTS},
        "holdout_eer": {v: detector_rows[v][1] for v in VARIANTS},
    }
    _emit(payload, res.out())
    return 0


def _load_calibration(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read calibration ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if payload.get("format_version") != CALIBRATION_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported calibration format version "
                        f"{payload.get('format_version')!r}")
    return payload


def _cmd_score(res):
    ds = _load_dataset(res)
    model = MCDropoutClassifier.load(res.get("checkpoint", required=True))
    councils = load_council(res.get("councils", required=True))
    variant = res.get("variant", "informed_democracy")
    n_passes = int(res.get("passes", 100))
    tau = res.get("tau")
    calibration_path = res.get("calibration")
    if tau is None and calibration_path:
        tau = _load_calibration(calibration_path)["taus"].get(variant)
    detector = NoveltyDetector(model, councils, variant=variant, n_passes=n_passes,
                               tau=float(tau) if tau is not None else None)
    seed = res.seed()
    base = rngmod.derived_seed(seed, "score", int(res.get("rep", 0)))
    preds = _mc_pool(model, ds.features, n_passes, base)
    scores = np.empty(len(preds))
    leaders = []
    for i, pred in enumerate(preds):
        score, leader, _size, _fallback = detector.score_from_prediction(pred)
        scores[i] = score
        leaders.append(str(model.classes_[leader]))
    means = np.vstack([p.mean for p in preds])
    uncs = np.vstack([p.uncertainty for p in preds])
    out = res.out()
    write_score_dump(out, ds.ids, ds.labels, leaders, scores, means, uncs,
                     [str(c) for c in model.classes_])
    line = f"wrote {out} ({len(preds)} samples, variant {variant}"
    if tau is not None:
        novel = int(np.sum(~(scores < float(tau))))
        line += f", tau {float(tau):.6g}, {novel} flagged novel"
    print(line + ")")
    return 0


def _cmd_eval_novelty(res):
    dump = load_score_dump(res.get("scores", required=True))
    known_labels = set(dump["class_labels"])
    flags = np.asarray([lab not in known_labels for lab in dump["true_labels"]])
    payload = _novelty_metrics(np.asarray(dump["scores"]), flags)
    _emit(payload, res.out(required=False))
    return 0


def _cmd_eval_gzsl(res):
    ds = _load_dataset(res)
    split = _load_split(res, ds)
    model = MCDropoutClassifier.load(res.get("checkpoint", required=True))
    councils = load_council(res.get("councils", required=True))
    calibration = _load_calibration(res.get("calibration", required=True))
    table = EmbeddingTable.load(res.get("embeddings", required=True))
    variant = res.get("variant", "informed_democracy")
    n_passes = int(res.get("passes", 100))
    tau = calibration["taus"].get(variant)
    if tau is None:
        raise DataError(f"calibration file has no tau for variant {variant!r}")
    detector = NoveltyDetector(model, councils, variant=variant,
                               n_passes=n_passes, tau=float(tau))
    method = res.get("method", "conse")
    seen = list(split.seen_classes)
    unseen = list(split.unseen_classes)
    top_k = min(int(res.get("top_k", 10)), len(seen))
    projector = None
    sub = ds.subset(split.subtrain)
    if method == "devise":
        projector = devise_train(sub.features, sub.labels, table,
                                 ridge=float(res.get("ridge", 1.0)))
    test = ds.subset(split.seen_test).merge(ds.subset(split.unseen_pool))
    flags = np.asarray([lab in set(unseen) for lab in test.labels])
    seed = res.seed()
    preds = _mc_pool(model, test.features, n_passes,
                     rngmod.derived_seed(seed, "score", split.repetition))
    requested = res.get("mode", "all")
    modes = GZSL_MODES if requested == "all" else (requested,)
    payload = {"method": method, "variant": variant}
    unseen_idx = np.flatnonzero(flags)
    for mode in modes:
        idx = np.arange(len(test)) if mode == "U+S->U+S" else unseen_idx
        labels_out = [gzsl_predict(test.features[i], detector, method, table,
                                   seen, unseen, mode=mode, prediction=preds[i],
                                   top_k=top_k, devise=projector)
                      for i in idx]
        truths = test.labels[idx]
        if mode == "U+S->U+S":
            acc_seen = accuracy(labels_out, truths, restrict_to=seen)
            acc_unseen = accuracy(labels_out, truths, restrict_to=unseen)
            payload[mode] = {
                "accuracy_seen": acc_seen,
                "accuracy_unseen": acc_unseen,
                "harmonic_mean": harmonic_mean(acc_seen, acc_unseen),
            }
        else:
            payload[mode] = {"accuracy_unseen": accuracy(labels_out, truths)}
    _emit(payload, res.out(required=False))
    return 0


def _cmd_baseline(res):
    ds = _load_dataset(res)
    split = _load_split(res, ds)
    sub = ds.subset(split.subtrain)
    test = ds.subset(split.seen_test).merge(ds.subset(split.unseen_pool))
    flags = np.asarray([lab in set(split.unseen_classes) for lab in test.labels])
    method = res.get("method", required=True)
    seed = res.seed()
    if method == "gmm":
        model = DiagonalGMM(n_components=min(int(res.get("components", 8)), len(sub)),
                            seed=rngmod.derived_seed(seed, "gmm", split.repetition))
        model.fit(sub.features)
        scores = model.novelty_score(test.features)
    elif method == "svm":
        gamma = res.get("gamma")
        model = RbfOneClassSVM(nu=float(res.get("nu", 0.1)),
                               gamma=float(gamma) if gamma is not None else None)
        model.fit(sub.features)
        scores = model.novelty_score(test.features)
    elif method == "softmax":
        head = MCDropoutClassifier.load(res.get("checkpoint", required=True))
        scores = softmax_confidence_scores(head, test.features)
    else:
        raise ParameterError(f"unknown baseline {method!r}, expected gmm, svm or softmax")
    payload = {"method": method}
    payload.update(_novelty_metrics(scores, flags))
    _emit(payload, res.out(required=False))
    return 0


def _cmd_run(res):
    values = dict(res.config)
    for key in ("features", "embeddings", "splits"):
        flag = getattr(res.args, key, None)
        if flag is not None:
            values[f"{key}_path"] = flag
    for key in ("repetitions", "epochs", "passes"):
        flag = getattr(res.args, key, None)
        if flag is not None:
            values["n_passes" if key == "passes" else key] = int(flag)
    if getattr(res.args, "gzsl", False):
        values["with_gzsl"] = True
    seed = getattr(res.args, "seed", None)
    if seed is not None:
        values["seed"] = int(seed)
    out = getattr(res.args, "out", None)
    if out is not None:
        values["out_dir"] = out
    values.pop("out", None)
    config = ExperimentConfig.from_dict(values)
    report = run_experiment(config)
    done = report["n_splits_completed"]
    total = report["n_splits_requested"]
    print(f"wrote {config.out_dir}/report.json ({done}/{total} splits"
          + (", PARTIAL" if report["partial"] else "") + ")")
    return 0


# ----------------------------------------------------------------------
def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a flag given before the subcommand from being clobbered
    # by the subparser's default when the same flag is declared on both
    shared.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON file supplying defaults for any setting")
    shared.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="root random seed (default 0)")
    shared.add_argument("--out", default=argparse.SUPPRESS,
                        help="output file or directory")

    parser = argparse.ArgumentParser(
        prog="quorum", parents=[shared],
        description="Open-set recognition by uncertainty voting over a "
                    "stochastic classification head.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[shared], **kwargs)

    p = add_parser("synth", help="generate a synthetic feature dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--novel", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--displacement", type=float)
    p.add_argument("--embedding-dim", type=int)
    p.set_defaults(func=_cmd_synth)

    p = add_parser("split", help="generate repeated seen/unseen splits")
    p.add_argument("--features", required=True)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seen", help="comma-separated class list pinning the seen side")
    p.set_defaults(func=_cmd_split)

    def common_data(p, checkpoint=False):
        p.add_argument("--features", required=True)
        p.add_argument("--splits", required=True)
        p.add_argument("--rep", type=int, default=0)
        p.add_argument("--raw-features", action="store_true",
                       help="skip per-row L2 normalization")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    p = add_parser("train", help="train the stochastic head on a split's subtrain part")
    common_data(p)
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=_cmd_train)

    p = add_parser("elect", help="elect per-leader councils on the holdout part")
    common_data(p, checkpoint=True)
    p.add_argument("--credibility", type=float)
    p.add_argument("--passes", type=int)
    p.set_defaults(func=_cmd_elect)

    p = add_parser("calibrate", help="calibrate rejection thresholds on pseudo-novel classes")
    common_data(p, checkpoint=True)
    p.add_argument("--councils", required=True)
    p.add_argument("--passes", type=int)
    p.add_argument("--pseudo-fraction", type=float)
    p.set_defaults(func=_cmd_calibrate)

    p = add_parser("score", help="score a features file and write a score dump")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--councils", required=True)
    p.add_argument("--raw-features", action="store_true")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--passes", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--calibration")
    p.add_argument("--rep", type=int, default=0)
    p.set_defaults(func=_cmd_score)

    p = add_parser("eval-novelty", help="novelty metrics from a score dump")
    p.add_argument("--scores", required=True)
    p.set_defaults(func=_cmd_eval_novelty)

    p = add_parser("eval-gzsl", help="generalized zero-shot accuracies for one split")
    common_data(p, checkpoint=True)
    p.add_argument("--councils", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--method", choices=("conse", "devise"))
    p.add_argument("--mode", choices=GZSL_MODES + ("all",))
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--top-k", type=int)
    p.add_argument("--ridge", type=float)
    p.add_argument("--passes", type=int)
    p.set_defaults(func=_cmd_eval_gzsl)

    p = add_parser("baseline", help="novelty metrics for a baseline method on one split")
    common_data(p)
    p.add_argument("--method", choices=("gmm", "svm", "softmax"))
    p.add_argument("--checkpoint", help="required for the softmax baseline")
    p.add_argument("--components", type=int)
    p.add_argument("--nu", type=float)
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=_cmd_baseline)

    p = add_parser("run", help="run the full experiment from a config")
    p.add_argument("--features")
    p.add_argument("--embeddings")
    p.add_argument("--splits")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--passes", type=int)
    p.add_argument("--gzsl", action="store_true")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 1
    try:
        config = _load_config(getattr(args, "config", None))
        return args.func(_Resolver(args, config))
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
