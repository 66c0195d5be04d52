"""Synthetic dataset generators for three task shapes (single-label blobs,
disjoint-class retrieval, sparse multi-label) and a delimited-text loader.

All generators are bit-deterministic per seed and emit float64 feature
matrices with per-row label tuples, so external feature-form datasets
loaded from text files are interchangeable with generated ones.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InvalidInput
from .mathcore import seeded_rng

__all__ = [
    "Dataset",
    "RetrievalSplit",
    "gen_blobs",
    "gen_retrieval",
    "gen_sparse_multilabel",
    "split_dataset",
    "scaler_stats",
    "apply_scaler",
    "standardize",
    "save_delimited",
    "load_delimited",
]


@dataclass
class Dataset:
    """Feature matrix [N x d] with one sorted label tuple per row."""

    features: np.ndarray
    labels: list
    K: int
    split_tag: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise InvalidInput(f"features must be a non-empty 2-D matrix, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInput("features must be finite")
        if len(self.labels) != self.features.shape[0]:
            raise InvalidInput(f"{self.features.shape[0]} feature rows but {len(self.labels)} label rows")
        if self.K < 2:
            raise InvalidInput(f"K must be >= 2, got {self.K}")
        clean = []
        for i, labels in enumerate(self.labels):
            row = tuple(sorted(int(c) for c in ((labels,) if np.isscalar(labels) else labels)))
            if not row:
                raise InvalidInput(f"row {i}: at least one label required")
            if len(set(row)) != len(row):
                raise InvalidInput(f"row {i}: duplicate labels {row}")
            if row[0] < 0 or row[-1] >= self.K:
                raise InvalidInput(f"row {i}: labels {row} out of range for K={self.K}")
            clean.append(row)
        self.labels = clean

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def is_single_label(self):
        return all(len(row) == 1 for row in self.labels)


@dataclass
class RetrievalSplit:
    """Zero-shot retrieval task: training identities never appear at eval."""

    train: Dataset
    gallery: Dataset
    query: Dataset
    train_classes: tuple
    test_classes: tuple

    def __post_init__(self):
        self.train_classes = tuple(sorted(set(int(c) for c in self.train_classes)))
        self.test_classes = tuple(sorted(set(int(c) for c in self.test_classes)))
        if set(self.train_classes) & set(self.test_classes):
            raise InvalidInput("train and test classes must be disjoint")
        test_set = set(self.test_classes)
        for name, ds in (("gallery", self.gallery), ("query", self.query)):
            for row in ds.labels:
                if any(c not in test_set for c in row):
                    raise InvalidInput(f"{name} labels must all lie in test_classes")


def _sphere_points(rng, count, dim, radius):
    v = rng.normal(size=(count, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    while np.any(norms < 1e-12):
        bad = norms[:, 0] < 1e-12
        v[bad] = rng.normal(size=(int(bad.sum()), dim))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v / norms


def gen_blobs(K, dim, n_per_class, separation, seed, split_tag="train"):
    """Balanced Gaussian blobs: K class means on a sphere of radius
    ``separation``, unit-variance isotropic noise, exactly ``n_per_class``
    rows per class (class-major row order)."""
    if K < 2:
        raise InvalidInput(f"K must be >= 2, got {K}")
    if dim < 2:
        raise InvalidInput(f"dim must be >= 2, got {dim}")
    if n_per_class < 1:
        raise InvalidInput(f"n_per_class must be >= 1, got {n_per_class}")
    if not (math.isfinite(separation) and separation >= 0):
        raise InvalidInput(f"separation must be finite and >= 0, got {separation}")
    rng = seeded_rng(seed)
    means = _sphere_points(rng, K, dim, separation)
    noise = rng.normal(size=(K * n_per_class, dim))
    features = np.repeat(means, n_per_class, axis=0) + noise
    labels = [(c,) for c in range(K) for _ in range(n_per_class)]
    meta = {"generator": "blobs", "K": K, "dim": dim, "n_per_class": n_per_class,
            "separation": float(separation), "seed": int(seed)}
    return Dataset(features, labels, K, split_tag=split_tag, meta=meta)


def gen_retrieval(K_train, K_test, dim, n_per_class, separation, seed):
    """Disjoint-class retrieval split.

    Each identity gets a mean on the separation sphere plus two view
    offsets; sample j of an identity uses view j % 2, so matching a query
    against the gallery requires crossing view variation (strictly so at
    n_per_class=2).  Per test identity: sample 0 is the query, the rest
    form the gallery.  Train labels are local (0..K_train-1 = head size);
    gallery/query keep global identity indices.
    """
    if K_train < 2 or K_test < 2:
        raise InvalidInput(f"K_train and K_test must be >= 2, got {K_train}, {K_test}")
    if dim < 2:
        raise InvalidInput(f"dim must be >= 2, got {dim}")
    if n_per_class < 2:
        raise InvalidInput(f"n_per_class must be >= 2 to form query+gallery, got {n_per_class}")
    if not (math.isfinite(separation) and separation >= 0):
        raise InvalidInput(f"separation must be finite and >= 0, got {separation}")
    rng = seeded_rng(seed)
    k_total = K_train + K_test
    means = _sphere_points(rng, k_total, dim, separation)
    view_offsets = rng.normal(size=(k_total, 2, dim))
    noise = rng.normal(size=(k_total, n_per_class, dim))
    view_idx = np.arange(n_per_class) % 2
    samples = means[:, None, :] + view_offsets[:, view_idx, :] + noise

    meta = {"generator": "retrieval", "K_train": K_train, "K_test": K_test, "dim": dim,
            "n_per_class": n_per_class, "separation": float(separation), "seed": int(seed)}
    train = Dataset(
        samples[:K_train].reshape(K_train * n_per_class, dim),
        [(c,) for c in range(K_train) for _ in range(n_per_class)],
        K_train, split_tag="train", meta=dict(meta))
    gallery = Dataset(
        samples[K_train:, 1:].reshape(K_test * (n_per_class - 1), dim),
        [(c,) for c in range(K_train, k_total) for _ in range(n_per_class - 1)],
        k_total, split_tag="test", meta=dict(meta))
    query = Dataset(
        samples[K_train:, 0],
        [(c,) for c in range(K_train, k_total)],
        k_total, split_tag="test", meta=dict(meta))
    return RetrievalSplit(train, gallery, query,
                          train_classes=tuple(range(K_train)),
                          test_classes=tuple(range(K_train, k_total)))


def gen_sparse_multilabel(K, N, avg_positives, imbalance_ratio, seed, dim=32, noise_scale=0.5):
    """Sparse multi-label data with power-law class prevalence.

    Prevalence p_k proportional to (k+1)^-gamma with gamma chosen so
    p_0 / p_{K-1} = imbalance_ratio, scaled so the expected number of
    positives per row is avg_positives.  Rows that draw no positive get
    one class drawn proportionally to prevalence, so every row has at
    least one label.  Features are the sum of the positives' prototype
    vectors plus Gaussian noise.
    """
    if K < 2:
        raise InvalidInput(f"K must be >= 2, got {K}")
    if N < 1:
        raise InvalidInput(f"N must be >= 1, got {N}")
    if not (1.0 <= avg_positives <= K / 2):
        raise InvalidInput(f"avg_positives must be in [1, K/2], got {avg_positives}")
    if imbalance_ratio < 1.0:
        raise InvalidInput(f"imbalance_ratio must be >= 1, got {imbalance_ratio}")
    if dim < 2:
        raise InvalidInput(f"dim must be >= 2, got {dim}")
    gamma = math.log(imbalance_ratio) / math.log(K)
    weights = np.power(np.arange(1, K + 1, dtype=float), -gamma)
    prevalence = weights * (avg_positives / weights.sum())
    if prevalence.max() > 1.0:
        raise ConfigError(
            f"infeasible prevalence: head class would need p={prevalence.max():.3f} > 1; "
            "reduce avg_positives or imbalance_ratio")
    rng = seeded_rng(seed)
    prototypes = rng.normal(size=(K, dim))
    hits = rng.random(size=(N, K)) < prevalence
    for i in np.flatnonzero(~hits.any(axis=1)):
        hits[i, rng.choice(K, p=prevalence / prevalence.sum())] = True
    features = hits.astype(float) @ prototypes + noise_scale * rng.normal(size=(N, dim))
    labels = [tuple(int(c) for c in np.flatnonzero(row)) for row in hits]
    meta = {"generator": "sparse_multilabel", "K": K, "N": N,
            "avg_positives": float(avg_positives), "imbalance_ratio": float(imbalance_ratio),
            "seed": int(seed), "dim": dim, "noise_scale": float(noise_scale),
            "prevalence_head": float(prevalence[0]), "prevalence_tail": float(prevalence[-1])}
    return Dataset(features, labels, K, split_tag="train", meta=meta)


def split_dataset(dataset, test_fraction, seed):
    """Deterministic train/test split; stratified per class when the
    dataset is single-label, plain shuffle otherwise."""
    if not (0.0 < test_fraction < 1.0):
        raise InvalidInput(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = seeded_rng(seed, 3)
    n = dataset.n
    if dataset.is_single_label():
        test_idx = []
        y = np.array([row[0] for row in dataset.labels])
        for c in np.unique(y):
            members = np.flatnonzero(y == c)
            members = members[rng.permutation(len(members))]
            test_idx.extend(members[: int(round(test_fraction * len(members)))])
        test_mask = np.zeros(n, dtype=bool)
        test_mask[test_idx] = True
    else:
        perm = rng.permutation(n)
        test_mask = np.zeros(n, dtype=bool)
        test_mask[perm[: int(round(test_fraction * n))]] = True
    if not test_mask.any() or test_mask.all():
        raise InvalidInput(f"split left an empty side (test_fraction={test_fraction}, n={n})")

    def take(mask, tag):
        idx = np.flatnonzero(mask)
        return Dataset(dataset.features[idx], [dataset.labels[i] for i in idx],
                       dataset.K, split_tag=tag, meta=dict(dataset.meta))

    return take(~test_mask, "train"), take(test_mask, "test")


def scaler_stats(train):
    """Per-dimension (mean, std) from a train split; near-constant
    dimensions (std < 1e-12) get std 1 so they pass through unscaled."""
    if train.split_tag != "train":
        raise InvalidInput(f"statistics must come from a train split, got {train.split_tag!r}")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    return mean, np.where(std < 1e-12, 1.0, std)


def apply_scaler(dataset, mean, std):
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if mean.shape != (dataset.dim,) or std.shape != (dataset.dim,):
        raise InvalidInput(f"scaler stats shaped {mean.shape}/{std.shape} do not fit dim {dataset.dim}")
    out = replace(dataset, features=(dataset.features - mean) / std, meta=dict(dataset.meta))
    out.meta["standardized"] = True
    return out


def standardize(train, *others):
    """Shift/scale every split to zero mean, unit variance per dimension,
    with statistics computed on the train split only (no test leakage).
    Idempotent: re-standardizing already-standardized splits is a no-op up
    to fp."""
    mean, std = scaler_stats(train)
    result = tuple(apply_scaler(ds, mean, std) for ds in (train, *others))
    return result[0] if not others else result


def save_delimited(dataset, path, delimiter=","):
    """Write as delimited text: header ``f0,...,f{d-1},labels``; the labels
    cell is a ';'-separated index list.  Floats use repr, so a reload is
    exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(dataset.dim)] + ["labels"])
        for row, labels in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [";".join(str(c) for c in labels)])
    return path


def load_delimited(path, delimiter=",", K=None, split_tag="train"):
    """Read the format written by :func:`save_delimited`.

    K is inferred as max(label)+1 when not given; declared K is validated
    against every label.  Parse failures name the 1-based file line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInput(f"{path}: empty file, no dataset to load") from None
        expected = [f"f{j}" for j in range(len(header) - 1)] + ["labels"]
        if header != expected:
            raise InvalidInput(f"{path}: line 1: expected header f0..f{len(header) - 2},labels, got {header}")
        dim = len(header) - 1
        if dim < 1:
            raise InvalidInput(f"{path}: line 1: no feature columns")
        rows = []
        labels = []
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != dim + 1:
                raise InvalidInput(f"{path}: line {lineno}: expected {dim + 1} cells, got {len(cells)}")
            try:
                rows.append([float(v) for v in cells[:dim]])
                labels.append(tuple(int(c) for c in cells[dim].split(";")))
            except ValueError as exc:
                raise InvalidInput(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise InvalidInput(f"{path}: no data rows, empty dataset")
    k_inferred = max(max(row) for row in labels) + 1
    if K is None:
        K = max(k_inferred, 2)
    elif k_inferred > K:
        raise InvalidInput(f"{path}: label {k_inferred - 1} out of range for declared K={K}")
    return Dataset(np.array(rows), labels, K, split_tag=split_tag,
                   meta={"generator": "load_delimited", "path": str(path)})
