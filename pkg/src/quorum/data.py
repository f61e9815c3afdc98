"""Feature datasets: the CSV interchange format and synthetic generation.

Features arrive as pre-extracted vectors in a plain comma-separated file
with a version line, so parse errors can name the offending line. The
synthetic generator places isotropic Gaussian clusters with guaranteed
mean separation, plus displaced clusters standing in for novel classes.
"""

import numpy as np

from . import rng as rngmod
from .errors import DataError, DimensionError, ParameterError

FEATURES_FORMAT_LINE = "# features v1"


class FeatureDataset:
    """Labeled feature vectors addressed by unique string ids."""

    def __init__(self, ids, labels, features, note: str = ""):
        self.ids = [str(i) for i in ids]
        if len(set(self.ids)) != len(self.ids):
            seen = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise DataError(f"duplicate sample id {dup!r}")
        self.labels = np.asarray([str(lab) for lab in labels])
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise DimensionError(f"features must be 2-dimensional, got shape {features.shape}")
        if len(self.ids) != len(self.labels) or len(self.ids) != features.shape[0]:
            raise DimensionError(
                f"ids ({len(self.ids)}), labels ({len(self.labels)}) and feature rows "
                f"({features.shape[0]}) disagree")
        if features.size == 0:
            raise DimensionError("feature matrix is empty")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite entries")
        self.features = features
        self.note = note

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def classes(self) -> list:
        return sorted(set(self.labels.tolist()))

    def subset(self, indices) -> "FeatureDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureDataset([self.ids[i] for i in indices], self.labels[indices],
                              self.features[indices], note=self.note)

    def merge(self, other: "FeatureDataset") -> "FeatureDataset":
        return FeatureDataset(self.ids + other.ids,
                              np.concatenate([self.labels, other.labels]),
                              np.vstack([self.features, other.features]),
                              note=self.note)


# ----------------------------------------------------------------------
def save_features(path, dataset: FeatureDataset) -> None:
    for value in list(dataset.ids) + dataset.labels.tolist():
        if "," in value or "\n" in value:
            raise DataError(f"ids and labels may not contain commas or newlines: {value!r}")
    header = "id,label," + ",".join(f"f{j}" for j in range(dataset.dim))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FEATURES_FORMAT_LINE + "\n")
        fh.write(header + "\n")
        for sample_id, label, row in zip(dataset.ids, dataset.labels, dataset.features):
            fh.write(sample_id + "," + label + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_features(path) -> FeatureDataset:
    """Parse the versioned CSV format with positional error messages."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot read features ({exc})") from exc
    if not lines or lines[0] != FEATURES_FORMAT_LINE:
        got = lines[0] if lines else "<empty file>"
        raise DataError(f"{path}: unsupported feature format line {got!r}")
    if len(lines) < 2:
        raise DataError(f"{path}: missing header line")
    header = lines[1].split(",")
    if len(header) < 3 or header[0] != "id" or header[1] != "label":
        raise DataError(f"{path}: line 2: header must start with id,label,f0,...")
    dim = len(header) - 2
    ids, labels, rows = [], [], []
    seen_ids = set()
    for line_no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 2:
            raise DataError(
                f"{path}: line {line_no}: expected {dim + 2} fields, got {len(parts)}")
        sample_id, label = parts[0], parts[1]
        if sample_id in seen_ids:
            raise DataError(f"{path}: line {line_no}: duplicate id {sample_id!r}")
        seen_ids.add(sample_id)
        values = np.empty(dim)
        for col, field in enumerate(parts[2:]):
            try:
                values[col] = float(field)
            except ValueError as exc:
                raise DataError(
                    f"{path}: line {line_no}, column {col + 3}: "
                    f"not a number: {field!r}") from exc
        ids.append(sample_id)
        labels.append(label)
        rows.append(values)
    if not ids:
        raise DataError(f"{path}: no data rows")
    return FeatureDataset(ids, labels, np.vstack(rows), note=f"loaded from {path}")


# ----------------------------------------------------------------------
def _place_means(rng, count, dim, scale, min_dist, anchors, max_attempts=10000):
    """Rejection-sample cluster means keeping min_dist from anchors and each other."""
    means = []
    for _ in range(count):
        for _attempt in range(max_attempts):
            candidate = rng.normal(scale=scale, size=dim)
            others = anchors + means
            if all(np.linalg.norm(candidate - m) >= min_dist for m in others):
                means.append(candidate)
                break
        else:
            raise DataError(
                f"could not place {count} cluster means at distance {min_dist} "
                f"in dimension {dim}; relax the geometry or raise the dimension")
    return means


def generate_synthetic(n_classes: int = 8, n_novel: int = 4, samples_per_class: int = 150,
                       dim: int = 64, separation: float = 6.0, noise: float = 1.0,
                       displacement: float = 8.0, seed: int = 0):
    """Build (seen, novel) datasets of isotropic Gaussian clusters.

    Seen class means keep pairwise distance >= separation; novel class
    means additionally keep distance >= displacement from every seen mean.
    displacement 0 disables that constraint, making novel clusters overlap
    the seen geometry.
    """
    if n_classes < 2:
        raise ParameterError(f"need at least 2 seen classes, got {n_classes}")
    if n_novel < 0:
        raise ParameterError(f"n_novel must be >= 0, got {n_novel}")
    if samples_per_class < 1:
        raise ParameterError(f"samples_per_class must be >= 1, got {samples_per_class}")
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    if separation < 0 or displacement < 0 or noise < 0:
        raise ParameterError("separation, displacement and noise must be >= 0")

    rng = rngmod.child(seed, "synth", "means")
    scale = max(separation, displacement, 1.0)
    seen_means = _place_means(rng, n_classes, dim, scale, separation, [])
    novel_means = []
    if n_novel:
        if displacement == 0.0:
            # hard case: novel clusters sit exactly on the seen geometry
            novel_means = [seen_means[j % n_classes] for j in range(n_novel)]
        else:
            min_dist = max(displacement, separation)
            novel_means = _place_means(rng, n_novel, dim, scale, min_dist, seen_means)

    def sample_block(means, prefix, id_offset):
        sample_rng = rngmod.child(seed, "synth", prefix)
        ids, labels, rows = [], [], []
        counter = id_offset
        for class_idx, mean in enumerate(means):
            label = f"{prefix}{class_idx:02d}"
            for _ in range(samples_per_class):
                rows.append(mean + sample_rng.normal(scale=noise, size=dim))
                ids.append(f"s{counter:06d}")
                labels.append(label)
                counter += 1
        return ids, labels, rows

    seen_ids, seen_labels, seen_rows = sample_block(seen_means, "k", 0)
    seen = FeatureDataset(seen_ids, seen_labels, np.vstack(seen_rows), note="synthetic")
    if not n_novel:
        return seen, None
    novel_ids, novel_labels, novel_rows = sample_block(novel_means, "n", len(seen_ids))
    novel = FeatureDataset(novel_ids, novel_labels, np.vstack(novel_rows), note="synthetic")
    return seen, novel


def synthetic_embeddings(labels, dim: int = 32, seed: int = 0) -> dict:
    """Random unit embedding per label, keyed for EmbeddingTable."""
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    vectors = {}
    for label in sorted(set(str(lab) for lab in labels)):
        rng = rngmod.child(seed, "embed", label)
        vec = rng.normal(size=dim)
        vectors[label] = vec / np.linalg.norm(vec)
    return vectors
