import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.data import (
    ClientLabelCounts,
    Dataset,
    SyntheticSpec,
    compute_prior,
    count_labels,
    generate_synthetic,
    load_idx,
    split_train_test,
)


class TestComputePrior:
    def test_symmetric_counts(self):
        prior = compute_prior(ClientLabelCounts(np.array([[5, 5], [5, 5]])))
        assert np.allclose(prior.probs, [0.5, 0.5])

    def test_equal_column_sums(self):
        prior = compute_prior(ClientLabelCounts(np.array([[9, 1], [1, 9]])))
        assert np.allclose(prior.probs, [0.5, 0.5])

    def test_hand_summed_columns(self):
        counts = ClientLabelCounts(np.array([[4, 0, 0], [0, 4, 0], [0, 0, 2]]))
        prior = compute_prior(counts)
        assert np.allclose(prior.probs, [0.4, 0.4, 0.2], atol=1e-15)

    def test_empty_federation(self):
        with pytest.raises(ValueError, match="empty federation"):
            compute_prior(ClientLabelCounts(np.zeros((3, 4), dtype=int)))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_sums_to_one_and_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        mat = rng.integers(0, 50, size=(rng.integers(1, 8), rng.integers(1, 6)))
        if mat.sum() == 0:
            mat[0, 0] = 1
        prior = compute_prior(ClientLabelCounts(mat))
        assert abs(prior.probs.sum() - 1.0) <= 1e-12
        perm = rng.permutation(mat.shape[0])
        shuffled = compute_prior(ClientLabelCounts(mat[perm]))
        assert np.array_equal(prior.probs, shuffled.probs)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 7))
    @settings(max_examples=50, deadline=None)
    def test_count_scaling_invariance(self, seed, k):
        rng = np.random.default_rng(seed)
        mat = rng.integers(0, 20, size=(3, 4))
        if mat.sum() == 0:
            mat[1, 2] = 3
        a = compute_prior(ClientLabelCounts(mat))
        b = compute_prior(ClientLabelCounts(mat * k))
        assert np.array_equal(a.probs, b.probs)


class TestCountLabels:
    def test_direct_tally(self):
        counts = count_labels([[0, 0, 1], [1, 1]], 2)
        assert np.array_equal(counts.counts, [[2, 1], [0, 2]])

    def test_empty_shard_permitted(self):
        counts = count_labels([[], [0]], 2)
        assert np.array_equal(counts.counts, [[0, 0], [1, 0]])

    def test_out_of_range_label(self):
        with pytest.raises(ValueError, match=r"client 0: label 2 out of range"):
            count_labels([[0, 2]], 2)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_row_sums_and_global_histogram(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 6))
        shards = [rng.integers(0, c, size=rng.integers(0, 30)) for _ in range(4)]
        counts = count_labels(shards, c)
        assert np.array_equal(counts.per_client, [len(s) for s in shards])
        pooled = np.bincount(np.concatenate([np.asarray(s) for s in shards] or [[]]), minlength=c)
        assert np.array_equal(counts.counts.sum(axis=0), pooled)


class TestGenerateSynthetic:
    def test_same_seed_bit_identical(self):
        spec = SyntheticSpec(3, 5, (10, 20, 30), seed=7)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_label_counts_match_spec(self):
        ds = generate_synthetic(SyntheticSpec(2, 3, (10, 10), seed=0))
        assert ds.n_samples == 20
        assert np.array_equal(ds.class_histogram(), [10, 10])

    def test_separated_means_centroid_oracle(self):
        # Means >= 6 sigma apart: a nearest-centroid rule should be near perfect.
        means = ((0.0, 0.0), (10.0, 0.0), (0.0, 10.0))
        ds = generate_synthetic(
            SyntheticSpec(3, 2, 300, means=means, cov_scale=1.0, seed=11)
        )
        cents = np.array(means)
        preds = np.argmin(
            ((ds.features[:, None, :] - cents[None]) ** 2).sum(-1), axis=1
        )
        assert np.mean(preds == ds.labels) >= 0.99

    def test_degenerate_spec(self):
        with pytest.raises(ValueError):
            SyntheticSpec(2, 0, 10)


def _write_idx_images(path: Path, images: np.ndarray) -> None:
    n, r, c = images.shape
    path.write_bytes(struct.pack(">IIII", 0x00000803, n, r, c) + images.astype(np.uint8).tobytes())


def _write_idx_labels(path: Path, labels: np.ndarray) -> None:
    path.write_bytes(struct.pack(">II", 0x00000801, labels.size) + labels.astype(np.uint8).tobytes())


class TestLoadIdx:
    def test_two_image_fixture_roundtrip(self, tmp_path):
        images = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        labels = np.array([1, 0], dtype=np.uint8)
        _write_idx_images(tmp_path / "img", images)
        _write_idx_labels(tmp_path / "lab", labels)
        ds = load_idx(tmp_path / "img", tmp_path / "lab")
        assert ds.n_samples == 2 and ds.n_features == 9
        assert np.array_equal(ds.features, images.reshape(2, 9) / 255.0)
        assert np.array_equal(ds.labels, [1, 0])

    def test_bad_magic(self, tmp_path):
        images = np.zeros((1, 2, 2), dtype=np.uint8)
        _write_idx_images(tmp_path / "img", images)
        bad = tmp_path / "lab"
        bad.write_bytes(struct.pack(">II", 0x00000899, 1) + b"\x00")
        with pytest.raises(ValueError, match="bad magic"):
            load_idx(tmp_path / "img", bad)

    def test_truncated_payload(self, tmp_path):
        trunc = tmp_path / "img"
        trunc.write_bytes(struct.pack(">IIII", 0x00000803, 2, 3, 3) + b"\x00" * 5)
        _write_idx_labels(tmp_path / "lab", np.array([0, 1], dtype=np.uint8))
        with pytest.raises(ValueError, match="truncated"):
            load_idx(trunc, tmp_path / "lab")

    def test_count_mismatch(self, tmp_path):
        _write_idx_images(tmp_path / "img", np.zeros((2, 2, 2), dtype=np.uint8))
        _write_idx_labels(tmp_path / "lab", np.array([0, 1, 1], dtype=np.uint8))
        with pytest.raises(ValueError, match="count mismatch"):
            load_idx(tmp_path / "img", tmp_path / "lab")

    @pytest.mark.skipif(
        not Path("data/mnist/train-images-idx3-ubyte").exists(),
        reason="MNIST files not present",
    )
    def test_real_mnist(self):
        ds = load_idx(
            "data/mnist/train-images-idx3-ubyte", "data/mnist/train-labels-idx1-ubyte"
        )
        assert ds.n_samples == 60000 and ds.n_features == 784 and ds.num_classes == 10


class TestSplitTrainTest:
    def _dataset(self, hist, seed=0):
        labels = np.concatenate([np.full(n, c) for c, n in enumerate(hist)])
        feats = np.random.default_rng(seed).normal(size=(labels.size, 3))
        return Dataset(feats, labels, len(hist))

    def test_exact_division(self):
        tr, te = split_train_test(self._dataset([50, 50]), 0.2, 0)
        assert np.array_equal(te.class_histogram(), [10, 10])
        assert np.array_equal(tr.class_histogram(), [40, 40])

    def test_largest_remainder_rounding(self):
        # Quotas 2.1 and 0.9 with a total of 3 -> [2, 1].
        _, te = split_train_test(self._dataset([7, 3]), 0.3, 1)
        assert np.array_equal(te.class_histogram(), [2, 1])

    def test_deterministic(self):
        ds = self._dataset([20, 30, 10])
        a = split_train_test(ds, 0.25, 9)
        b = split_train_test(ds, 0.25, 9)
        assert np.array_equal(a[0].features, b[0].features)
        assert np.array_equal(a[1].features, b[1].features)

    def test_small_class_rejected(self):
        with pytest.raises(ValueError, match="fewer than 2"):
            split_train_test(self._dataset([10, 1]), 0.2, 0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_partition_of_indices_and_proportions(self, seed):
        rng = np.random.default_rng(seed)
        hist = rng.integers(5, 40, size=int(rng.integers(2, 5)))
        ds = self._dataset(list(hist), seed)
        frac = float(rng.uniform(0.1, 0.5))
        tr, te = split_train_test(ds, frac, seed)
        assert tr.n_samples + te.n_samples == ds.n_samples
        # Union of rows equals the original multiset of rows.
        both = np.vstack([tr.features, te.features])
        assert np.array_equal(
            np.sort(both.ravel()), np.sort(ds.features.ravel())
        )
        # Label proportions agree within one sample of the smallest class
        # count present in either split.
        tol = 1.0 / min(tr.class_histogram().min(), te.class_histogram().min())
        p_tr = tr.class_histogram() / tr.n_samples
        p_te = te.class_histogram() / te.n_samples
        assert np.all(np.abs(p_tr - p_te) <= tol + 1e-12)
