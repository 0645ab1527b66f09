"""Synthetic classification data, node partitioning, and a plain-text
dataset format.

The file format is line oriented: a header ``n_features n_classes
n_samples`` followed by one row per sample, ``label idx:val idx:val
...`` listing only nonzero features.  Values are written with 17
significant digits so a write/read round trip is exact.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .rng import substream

__all__ = [
    "Dataset",
    "HeterogeneousSplit",
    "make_synthetic_classification",
    "partition_heterogeneous",
    "write_dataset",
    "read_dataset",
]


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n_samples, n_features), float64
    labels: np.ndarray  # (n_samples,), int64 in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        n, _ = self.features.shape
        if self.labels.shape != (n,):
            raise DataError(
                f"labels shape {self.labels.shape} does not match {n} samples"
            )
        if self.n_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.n_classes}")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DataError("labels out of range")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def make_synthetic_classification(
    n_samples: int = 2000,
    n_features: int = 500,
    n_classes: int = 10,
    density: float = 0.05,
    seed: int = 0,
) -> Dataset:
    """Sparse linearly separable classes on distinct feature supports.

    Each class activates its own random 5%-ish feature subset with
    positive weights; samples add jitter and background noise on another
    random subset.  Columns are min-max scaled to [0, 1].
    """
    rng = substream(seed, "data")
    support_size = max(2, round(density * n_features))
    out = np.zeros((n_samples, n_features))
    labels = np.arange(n_samples, dtype=np.int64) % n_classes
    supports = [
        rng.choice(n_features, size=support_size, replace=False) for _ in range(n_classes)
    ]
    protos = [rng.uniform(0.6, 1.0, size=support_size) for _ in range(n_classes)]
    for s in range(n_samples):
        c = labels[s]
        out[s, supports[c]] = protos[c] * rng.uniform(0.7, 1.3, size=support_size)
        bg = rng.choice(n_features, size=support_size, replace=False)
        out[s, bg] += rng.uniform(0.0, 0.4, size=support_size)
    # min-max per column; constant columns collapse to 0
    lo = out.min(axis=0)
    span = out.max(axis=0) - lo
    span[span == 0.0] = 1.0
    out = (out - lo) / span
    return Dataset(out, labels, n_classes)


@dataclass(frozen=True)
class HeterogeneousSplit:
    """Assignment of samples to nodes with tunable skew.

    A fraction h of each class goes to the class's designated node
    (class c -> node c mod m); the rest spreads uniformly over the other
    nodes.  h = 1/m reproduces the uniform split, h = 1 gives fully
    disjoint class ownership (when classes >= nodes).
    """

    m: int
    h: float
    node_of: np.ndarray  # (n_samples,), int64

    def indices(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.node_of == node)

    def counts(self) -> np.ndarray:
        return np.bincount(self.node_of, minlength=self.m)


def partition_heterogeneous(
    labels: np.ndarray, m: int, h: float, seed: int
) -> HeterogeneousSplit:
    labels = np.asarray(labels)
    n = labels.size
    if m < 1:
        raise DataError(f"node count must be >= 1, got {m}")
    if n < m:
        raise DataError(f"cannot spread {n} samples over {m} nodes")
    if m == 1:
        return HeterogeneousSplit(1, 1.0, np.zeros(n, dtype=np.int64))
    if not (1.0 / m <= h <= 1.0):
        raise DataError(
            f"heterogeneity h must lie in [1/m, 1] = [{1.0 / m:.4g}, 1], got {h}"
        )
    rng = substream(seed, "split")
    node_of = np.empty(n, dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        designated = int(c) % m
        take = int(round(h * idx.size))
        if idx.size < m:
            warnings.warn(
                f"class {c} has {idx.size} samples for {m} nodes; split is degraded"
            )
        node_of[idx[:take]] = designated
        others = np.array([i for i in range(m) if i != designated])
        node_of[idx[take:]] = rng.choice(others, size=idx.size - take)
    # never leave a node empty: pull singles from the fullest nodes
    counts = np.bincount(node_of, minlength=m)
    for empty in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        moved = rng.choice(np.flatnonzero(node_of == donor))
        node_of[moved] = empty
        counts = np.bincount(node_of, minlength=m)
        warnings.warn(f"node {empty} received no samples; moved one from node {donor}")
    return HeterogeneousSplit(m, float(h), node_of)


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{ds.n_features} {ds.n_classes} {ds.n_samples}\n")
        for s in range(ds.n_samples):
            row = ds.features[s]
            nz = np.flatnonzero(row)
            pairs = " ".join(f"{j}:{row[j]:.17g}" for j in nz)
            fh.write(f"{ds.labels[s]} {pairs}".rstrip() + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise DataError(f"{path}: line 1: header must be 'n_features n_classes n_samples'")
        try:
            n_features, n_classes, n_samples = (int(x) for x in header)
        except ValueError:
            raise DataError(f"{path}: line 1: non-integer header field") from None
        features = np.zeros((n_samples, n_features))
        labels = np.empty(n_samples, dtype=np.int64)
        row = 0
        for ln, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if row >= n_samples:
                raise DataError(f"{path}: line {ln}: more rows than header declares")
            parts = line.split()
            try:
                label = int(parts[0])
            except ValueError:
                raise DataError(f"{path}: line {ln}: malformed label {parts[0]!r}") from None
            if not (0 <= label < n_classes):
                raise DataError(f"{path}: line {ln}: label {label} out of range")
            labels[row] = label
            for pair in parts[1:]:
                try:
                    j_str, v_str = pair.split(":", 1)
                    j, v = int(j_str), float(v_str)
                except ValueError:
                    raise DataError(f"{path}: line {ln}: malformed pair {pair!r}") from None
                if not (0 <= j < n_features):
                    raise DataError(f"{path}: line {ln}: feature index {j} out of range")
                features[row, j] = v
            row += 1
        if row != n_samples:
            raise DataError(f"{path}: expected {n_samples} rows, found {row}")
    return Dataset(features, labels, n_classes)
