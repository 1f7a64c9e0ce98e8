import numpy as np
import pytest

from fedsim.alloc import largest_remainder
from fedsim.data import SyntheticSpec, generate_synthetic, split_train_test
from fedsim.partition import (
    PRACTICAL_FRACTIONS,
    PartitionPlan,
    build_partition,
    describe,
    describe_csv,
    partition_pathological,
    partition_practical,
)


def _labels(seed=0, num_classes=10, n=2000):
    rng = np.random.default_rng(seed)
    train = rng.integers(0, num_classes, size=n)
    test = rng.integers(0, num_classes, size=n // 5)
    # Guarantee every class appears in both splits.
    train[:num_classes] = np.arange(num_classes)
    test[:num_classes] = np.arange(num_classes)
    return train, test


def _check_exact_partition(shards, n_train):
    all_idx = np.concatenate([s.train_indices for s in shards])
    assert all_idx.size == n_train
    assert np.array_equal(np.sort(all_idx), np.arange(n_train))


class TestLargestRemainder:
    def test_shards_of_1000(self):
        sizes = largest_remainder(1000, PRACTICAL_FRACTIONS, minimum=1)
        assert sorted(sizes, reverse=True) == [800, 100] + [10] * 10

    def test_shards_of_97_brute_force_oracle(self):
        # Oracle: floor quotas, then hand out the deficit by remainder rank.
        quotas = [f * 97 for f in PRACTICAL_FRACTIONS]
        parts = [int(q) for q in quotas]
        rem = [q - p for q, p in zip(quotas, parts)]
        for _ in range(97 - sum(parts)):
            j = max(range(len(rem)), key=lambda i: (rem[i], -i))
            parts[j] += 1
            rem[j] = -1.0
        assert sum(parts) == 97 and all(p >= 1 for p in parts)
        assert list(largest_remainder(97, PRACTICAL_FRACTIONS, minimum=1)) == parts

    def test_minimum_enforced(self):
        sizes = largest_remainder(12, PRACTICAL_FRACTIONS, minimum=1)
        assert sizes.sum() == 12 and sizes.min() >= 1


class TestPathological:
    def test_exactly_two_classes_per_client(self):
        train, test = _labels(1)
        shards = partition_pathological(train, test, 10, seed=4)
        for s in shards:
            assert np.unique(train[s.train_indices]).size == 2

    def test_exhaustive_disjoint(self):
        train, test = _labels(2)
        shards = partition_pathological(train, test, 10, seed=0)
        _check_exact_partition(shards, train.size)

    def test_deterministic(self):
        train, test = _labels(3)
        a = partition_pathological(train, test, 10, seed=9)
        b = partition_pathological(train, test, 10, seed=9)
        for x, y in zip(a, b):
            assert np.array_equal(x.train_indices, y.train_indices)
            assert np.array_equal(x.test_indices, y.test_indices)

    def test_infeasible_coverage(self):
        train, test = _labels(0, num_classes=30)
        with pytest.raises(ValueError, match="cannot cover"):
            partition_pathological(train, test, 30, num_clients=5, seed=0)


class TestPractical:
    def test_every_client_holds_every_class(self):
        train, test = _labels(5)
        shards = partition_practical(train, test, 10, seed=1)
        for s in shards:
            assert np.unique(train[s.train_indices]).size == 10

    def test_exhaustive_disjoint(self):
        train, test = _labels(6)
        shards = partition_practical(train, test, 10, seed=2)
        _check_exact_partition(shards, train.size)

    def test_per_class_shard_sizes(self):
        train, test = _labels(7)
        shards = partition_practical(train, test, 10, seed=3)
        hist = np.bincount(train, minlength=10)
        counts = np.zeros((12, 10), dtype=int)
        for s in shards:
            counts[s.client_id] = np.bincount(train[s.train_indices], minlength=10)
        for c in range(10):
            target = largest_remainder(int(hist[c]), PRACTICAL_FRACTIONS, minimum=1)
            got = np.sort(counts[:, c])[::-1]
            assert np.all(np.abs(got - np.sort(target)[::-1]) <= 1)

    def test_small_class_rejected(self):
        train = np.concatenate([np.zeros(100, dtype=int), np.ones(5, dtype=int)])
        test = np.array([0, 1] * 5)
        with pytest.raises(ValueError, match="class 1"):
            partition_practical(train, test, 2, seed=0)

    def test_wrong_client_count(self):
        train, test = _labels(8)
        with pytest.raises(ValueError, match="12 clients"):
            partition_practical(train, test, 10, num_clients=5, seed=0)


class TestTestMirroring:
    @pytest.mark.parametrize("scheme", ["pathological", "practical"])
    def test_test_distribution_matches_train(self, scheme):
        ds = generate_synthetic(SyntheticSpec(6, 4, 400, seed=3))
        tr, te = split_train_test(ds, 0.2, 0)
        for seed in range(10):
            plan = PartitionPlan(scheme, seed=seed)
            shards = build_partition(plan, tr.labels, te.labels, 6)
            # Targets: each class's test pool split in proportion to the
            # clients' train counts of that class.
            tr_counts = np.stack(
                [np.bincount(tr.labels[s.train_indices], minlength=6) for s in shards]
            )
            te_counts = np.stack(
                [np.bincount(te.labels[s.test_indices], minlength=6) for s in shards]
            )
            te_pool = np.bincount(te.labels, minlength=6)
            target = te_pool * tr_counts / tr_counts.sum(axis=0)
            assert np.all(np.abs(te_counts - target) <= 1.0 + 1e-9)

    def test_test_indices_disjoint(self):
        train, test = _labels(11)
        shards = partition_practical(train, test, 10, seed=4)
        all_test = np.concatenate([s.test_indices for s in shards])
        assert np.unique(all_test).size == all_test.size


class TestDescribe:
    def test_row_conservation(self):
        train, test = _labels(12)
        shards = partition_practical(train, test, 10, seed=5)
        rows = describe(shards, train, test, 10)
        assert len(rows) == 12 * 10
        assert sum(r[2] for r in rows) == train.size
        csv = describe_csv(shards, train, test, 10)
        assert csv.splitlines()[0] == "client,class,train_count,test_count"
        assert len(csv.splitlines()) == 1 + 12 * 10
