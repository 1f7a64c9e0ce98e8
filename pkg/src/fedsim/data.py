"""Dataset containers, synthetic blob generation, IDX ingestion, label accounting."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alloc import largest_remainder

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

PRIOR_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class labels.

    Immutable after construction; arrays are marked read-only so views can be
    shared freely across concurrent client workers.
    """

    features: np.ndarray  # (n_samples, n_features) float64
    labels: np.ndarray  # (n_samples,) int64
    num_classes: int

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labs = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if feats.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError(
                f"labels length {labs.shape[0] if labs.ndim == 1 else labs.shape} "
                f"does not match feature row count {feats.shape[0]}"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labs.min() < 0 or labs.max() >= self.num_classes:
            raise ValueError(f"label out of range [0, {self.num_classes})")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ClientLabelCounts:
    """Per-client, per-class sample counts shared with the coordinator."""

    counts: np.ndarray  # (num_clients, num_classes) nonnegative int64

    def __post_init__(self) -> None:
        c = np.ascontiguousarray(np.asarray(self.counts, dtype=np.int64))
        if c.ndim != 2:
            raise ValueError("counts must be a clients x classes matrix")
        if np.any(c < 0):
            raise ValueError("counts must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def num_clients(self) -> int:
        return self.counts.shape[0]

    @property
    def num_classes(self) -> int:
        return self.counts.shape[1]

    @property
    def per_client(self) -> np.ndarray:
        """Total sample count per client."""
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class PriorDistribution:
    """Federation-wide class frequency estimate."""

    probs: np.ndarray  # (num_classes,) float64 in [0, 1]

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a nonempty vector")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > PRIOR_SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return self.probs.size


def compute_prior(counts: ClientLabelCounts) -> PriorDistribution:
    """Class frequencies pooled over all clients: column sums over grand total."""
    per_class = counts.counts.sum(axis=0)
    total = int(per_class.sum())
    if total == 0:
        raise ValueError("empty federation: all client label counts are zero")
    return PriorDistribution(per_class / total)


def count_labels(shards, num_classes: int) -> ClientLabelCounts:
    """Tally per-class counts for each client's label vector."""
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    rows = []
    for i, shard in enumerate(shards):
        arr = np.asarray(shard, dtype=np.int64).reshape(-1)
        if arr.size:
            bad = arr[(arr < 0) | (arr >= num_classes)]
            if bad.size:
                raise ValueError(
                    f"client {i}: label {int(bad[0])} out of range [0, {num_classes})"
                )
        rows.append(np.bincount(arr, minlength=num_classes))
    if not rows:
        raise ValueError("no client shards given")
    return ClientLabelCounts(np.stack(rows))


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic Gaussian blob dataset description."""

    num_classes: int
    n_features: int
    n_per_class: tuple  # one count per class
    means: tuple | None = None  # (num_classes, n_features); drawn from seed if None
    mean_scale: float = 3.0
    cov_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("synthetic spec needs at least 2 classes")
        if self.n_features < 1:
            raise ValueError("synthetic spec needs at least 1 feature")
        npc = self.n_per_class
        if isinstance(npc, int):
            npc = (npc,) * self.num_classes
        npc = tuple(int(v) for v in npc)
        if len(npc) != self.num_classes or any(v < 1 for v in npc):
            raise ValueError("n_per_class must give every class at least 1 sample")
        object.__setattr__(self, "n_per_class", npc)
        if self.cov_scale <= 0:
            raise ValueError("cov_scale must be positive")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a blob dataset; fully determined by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if spec.means is not None:
        means = np.asarray(spec.means, dtype=np.float64)
        if means.shape != (spec.num_classes, spec.n_features):
            raise ValueError(
                f"means shape {means.shape} != "
                f"({spec.num_classes}, {spec.n_features})"
            )
        # Burn the same draw so explicit means leave the sample stream unchanged.
        rng.normal(0.0, 1.0, size=(spec.num_classes, spec.n_features))
    else:
        means = rng.normal(0.0, spec.mean_scale, size=(spec.num_classes, spec.n_features))

    blocks = []
    labels = []
    for c, n_c in enumerate(spec.n_per_class):
        blocks.append(means[c] + rng.normal(0.0, spec.cov_scale, size=(n_c, spec.n_features)))
        labels.append(np.full(n_c, c, dtype=np.int64))
    feats = np.concatenate(blocks, axis=0)
    labs = np.concatenate(labels)
    perm = rng.permutation(feats.shape[0])
    return Dataset(feats[perm], labs[perm], spec.num_classes)


def _read_idx(path, expected_magic: int, rank: int) -> tuple[np.ndarray, tuple]:
    raw = Path(path).read_bytes()
    header_len = 4 + 4 * rank
    if len(raw) < header_len:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ValueError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{rank}I", raw[4:header_len])
    n_payload = int(np.prod(dims)) if dims else 0
    if len(raw) != header_len + n_payload:
        raise ValueError(
            f"{path}: truncated IDX payload, expected {n_payload} bytes, "
            f"got {len(raw) - header_len}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)
    return data, dims


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair.

    Pixels are scaled to [0, 1] and flattened row-major; the class count is
    taken as max label + 1.
    """
    images, (n_img, rows, cols) = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels, (n_lab,) = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise ValueError(
            f"count mismatch: {n_img} images in {images_path} vs "
            f"{n_lab} labels in {labels_path}"
        )
    feats = images.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labs = labels.astype(np.int64)
    return Dataset(feats, labs, int(labs.max()) + 1)


def split_train_test(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split keeping train/test label distributions matched.

    Per-class test counts come from largest-remainder rounding of
    n_c * test_fraction, so totals are exact and reproducible.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    hist = ds.class_histogram()
    small = np.flatnonzero(hist < 2)
    if small.size:
        raise ValueError(
            f"class {int(small[0])} has fewer than 2 samples; cannot stratify"
        )
    total_test = int(round(ds.n_samples * test_fraction))
    per_class_test = largest_remainder(total_test, hist / ds.n_samples)
    over = np.flatnonzero(per_class_test >= hist)
    if over.size:
        raise ValueError(
            f"test fraction {test_fraction} leaves class {int(over[0])} without training samples"
        )

    rng = np.random.default_rng(seed)
    test_idx = []
    train_idx = []
    for c in range(ds.num_classes):
        pool = np.flatnonzero(ds.labels == c)
        pool = pool[rng.permutation(pool.size)]
        t = int(per_class_test[c])
        test_idx.append(pool[:t])
        train_idx.append(pool[t:])
    test_idx = np.sort(np.concatenate(test_idx))
    train_idx = np.sort(np.concatenate(train_idx))
    train = Dataset(ds.features[train_idx], ds.labels[train_idx], ds.num_classes)
    test = Dataset(ds.features[test_idx], ds.labels[test_idx], ds.num_classes)
    return train, test
