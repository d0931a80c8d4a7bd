"""Dataset construction: synthetic sub-clustered classes, feature-CSV
ingestion, symmetric label-noise injection, and batch sampling.

The feature CSV layout is `label,f0,...,f{D-1}` with non-negative integer
labels, one row per sample, UTF-8, plain decimal points.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class ClusterSpec:
    """Recipe for a synthetic dataset where each class is a chain of
    Gaussian blobs, mimicking intra-class feature sub-clustering."""

    n_classes: int
    subclusters_per_class: int
    input_dim: int
    samples_per_class: int
    intra_spread: float
    subcluster_separation: float
    seed: int

    def __post_init__(self):
        for name in ("n_classes", "subclusters_per_class", "input_dim", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.intra_spread <= 0.0 or self.subcluster_separation <= 0.0:
            raise ConfigError("spreads must be positive")


@dataclass
class Dataset:
    """Features with immutable true labels, mutable-by-noise training labels,
    and a train/test index split."""

    features: np.ndarray
    true_labels: np.ndarray
    train_labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    n_classes: int
    flipped_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_train_classes(self) -> int:
        return int(self.train_labels[self.train_idx].max()) + 1


def blob_centers(spec: ClusterSpec) -> np.ndarray:
    """Deterministic blob centers, shape (n_classes, subclusters, input_dim).

    Class centers are standard-normal draws; a class's blobs sit on a chain
    along one random direction with adjacent centers `subcluster_separation`
    apart.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    class_centers = rng.standard_normal((spec.n_classes, spec.input_dim))
    directions = rng.standard_normal((spec.n_classes, spec.input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    k = spec.subclusters_per_class
    offsets = (np.arange(k) - (k - 1) / 2.0) * spec.subcluster_separation
    return class_centers[:, None, :] + offsets[None, :, None] * directions[:, None, :]


def _blob_sizes(samples_per_class: int, k: int) -> list:
    base = samples_per_class // k
    sizes = [base + (1 if i < samples_per_class % k else 0) for i in range(k)]
    return sizes


def gen_clusters(spec: ClusterSpec, train_fraction: float = 0.5) -> Dataset:
    """Sample the mixture described by `spec` with a within-class train/test
    split. Rows are laid out class-major, blob-major; two calls with the same
    spec produce identical datasets."""
    if not (0.0 < train_fraction < 1.0):
        raise ConfigError("train_fraction must be in (0, 1)")
    centers = blob_centers(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    rows = []
    labels = []
    for c in range(spec.n_classes):
        for b, size in enumerate(_blob_sizes(spec.samples_per_class, spec.subclusters_per_class)):
            rows.append(centers[c, b] + spec.intra_spread * rng.standard_normal((size, spec.input_dim)))
            labels.extend([c] * size)
    features = np.vstack(rows)
    true_labels = np.asarray(labels, dtype=np.int64)

    split_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2]))
    train_parts, test_parts = [], []
    n_train_per_class = int(round(train_fraction * spec.samples_per_class))
    for c in range(spec.n_classes):
        idx = np.flatnonzero(true_labels == c)
        perm = split_rng.permutation(idx)
        train_parts.append(np.sort(perm[:n_train_per_class]))
        test_parts.append(np.sort(perm[n_train_per_class:]))
    return Dataset(
        features=features,
        true_labels=true_labels,
        train_labels=true_labels.copy(),
        train_idx=np.concatenate(train_parts),
        test_idx=np.concatenate(test_parts),
        n_classes=spec.n_classes,
    )


def inject_noise(labels, ratio: float, n_classes: int, seed):
    """Flip round(ratio * n) labels, chosen by seeded permutation, each to a
    uniformly random different class. Returns (noisy_labels, flipped_indices)."""
    if not (0.0 <= ratio <= 1.0):
        raise ValueError("ratio must be in [0, 1]")
    y = np.asarray(labels, dtype=np.int64).copy()
    n = y.shape[0]
    k = int(round(ratio * n))
    if k == 0:
        return y, np.empty(0, dtype=np.int64)
    if n_classes < 2:
        raise ValueError("need at least 2 classes to flip labels")
    rng = np.random.default_rng(seed)
    flipped = np.sort(rng.permutation(n)[:k])
    shifts = rng.integers(1, n_classes, size=k)
    y[flipped] = (y[flipped] + shifts) % n_classes
    return y, flipped


def with_noise(dataset: Dataset, ratio: float, seed) -> Dataset:
    """Copy of `dataset` with symmetric noise injected into the train-split
    labels only; test labels stay clean."""
    noisy_train, flipped_local = inject_noise(
        dataset.train_labels[dataset.train_idx], ratio, dataset.n_classes, seed
    )
    train_labels = dataset.train_labels.copy()
    train_labels[dataset.train_idx] = noisy_train
    return Dataset(
        features=dataset.features,
        true_labels=dataset.true_labels,
        train_labels=train_labels,
        train_idx=dataset.train_idx,
        test_idx=dataset.test_idx,
        n_classes=dataset.n_classes,
        flipped_idx=dataset.train_idx[flipped_local],
    )


def epoch_batches(indices, batch_size: int, rng) -> list:
    """Shuffle `indices` and split into consecutive batches; together the
    batches cover every index exactly once."""
    idx = np.asarray(indices)
    if batch_size < 1 or batch_size > idx.size:
        raise ConfigError(f"batch_size {batch_size} invalid for {idx.size} samples")
    perm = rng.permutation(idx)
    return [perm[i : i + batch_size] for i in range(0, idx.size, batch_size)]


def sample_batch(dataset: Dataset, batch_size: int, rng) -> np.ndarray:
    """One uniformly random batch of train-split indices, without replacement."""
    return epoch_batches(dataset.train_idx, batch_size, rng)[0]


def load_features(path) -> Dataset:
    """Parse a feature CSV into a Dataset with a class-disjoint split: the
    first ceil(n_classes / 2) class ids train, the rest test."""
    rows = []
    labels = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no rows") from None
        width = len(header) - 1
        expected = ["label"] + [f"f{i}" for i in range(width)]
        if width < 1 or header != expected:
            raise DataError(f"{path}: unknown header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise DataError(f"{path}: line {lineno}: expected {width + 1} cells, got {len(row)}")
            try:
                label = int(row[0])
                values = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if label < 0:
                raise DataError(f"{path}: line {lineno}: negative label {label}")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no rows")
    features = np.asarray(rows, dtype=np.float64)
    true_labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(true_labels.max()) + 1
    threshold = (n_classes + 1) // 2
    train_idx = np.flatnonzero(true_labels < threshold)
    test_idx = np.flatnonzero(true_labels >= threshold)
    return Dataset(
        features=features,
        true_labels=true_labels,
        train_labels=true_labels.copy(),
        train_idx=train_idx,
        test_idx=test_idx,
        n_classes=n_classes,
    )
