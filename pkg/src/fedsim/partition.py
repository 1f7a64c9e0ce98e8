"""Non-IID client partitioning: two-class pathological and 1/10/80 practical schemes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alloc import largest_remainder

# Per class: one 80% shard, one 10% shard, ten 1% shards (12 clients).
PRACTICAL_FRACTIONS = (0.80, 0.10) + (0.01,) * 10

_SCHEMES = ("pathological", "practical")


@dataclass(frozen=True)
class ClientShard:
    """One client's view: index lists into the train and test datasets."""

    client_id: int
    train_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self) -> None:
        tr = np.ascontiguousarray(np.asarray(self.train_indices, dtype=np.int64))
        te = np.ascontiguousarray(np.asarray(self.test_indices, dtype=np.int64))
        for name, arr in (("train", tr), ("test", te)):
            if arr.ndim != 1:
                raise ValueError(f"{name} indices must be 1-D")
            if np.unique(arr).size != arr.size:
                raise ValueError(f"client {self.client_id}: duplicate {name} indices")
        tr.setflags(write=False)
        te.setflags(write=False)
        object.__setattr__(self, "train_indices", tr)
        object.__setattr__(self, "test_indices", te)


@dataclass(frozen=True)
class PartitionPlan:
    scheme: str
    num_clients: int = 12
    seed: int = 0
    classes_per_client: int = 2  # pathological only

    def __post_init__(self) -> None:
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.num_clients < 2:
            raise ValueError("need at least 2 clients")
        if self.classes_per_client < 1:
            raise ValueError("classes_per_client must be positive")


def build_partition(plan: PartitionPlan, train_labels, test_labels, num_classes: int):
    if plan.scheme == "pathological":
        return partition_pathological(
            train_labels,
            test_labels,
            num_classes,
            num_clients=plan.num_clients,
            seed=plan.seed,
            classes_per_client=plan.classes_per_client,
        )
    return partition_practical(
        train_labels, test_labels, num_classes, num_clients=plan.num_clients, seed=plan.seed
    )


def _mirror_test_indices(
    train_counts: np.ndarray, test_labels: np.ndarray, num_classes: int
) -> list[list[np.ndarray]]:
    """Allocate each class's test pool to clients proportionally to train counts.

    Largest-remainder per class keeps every client's test label mix within one
    sample per class of its train mix, while the class pools stay an exact
    partition across clients.
    """
    n_clients = train_counts.shape[0]
    per_client: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    alloc = np.zeros_like(train_counts)
    quota = np.zeros(train_counts.shape, dtype=np.float64)
    for c in range(num_classes):
        pool = np.flatnonzero(test_labels == c)
        owners = np.flatnonzero(train_counts[:, c] > 0)
        if pool.size == 0 or owners.size == 0:
            continue
        shares = train_counts[owners, c]
        quota[owners, c] = pool.size * shares / shares.sum()
        sizes = largest_remainder(pool.size, shares)
        start = 0
        for owner, size in zip(owners, sizes):
            per_client[int(owner)].append(pool[start : start + size])
            alloc[int(owner), c] = size
            start += size
    # A client whose shares all rounded to zero gets one sample of its largest
    # train class. Donating from the client currently furthest above its quota
    # keeps every allocation within one sample of its proportional target.
    for i in range(n_clients):
        if alloc[i].sum() > 0:
            continue
        c = int(np.argmax(train_counts[i]))
        # A donation must not empty the donor, or a previously fixed-up client
        # could be drained right back to zero.
        candidates = np.flatnonzero((alloc[:, c] > 0) & (alloc.sum(axis=1) > 1))
        if candidates.size == 0:
            raise ValueError(f"client {i}: no test samples available for class {c}")
        donor = int(candidates[np.argmax((alloc - quota)[candidates, c])])
        for k, chunk in enumerate(per_client[donor]):
            if chunk.size and test_labels[chunk[0]] == c:
                per_client[donor][k] = chunk[1:]
                per_client[i].append(chunk[:1])
                alloc[donor, c] -= 1
                alloc[i, c] += 1
                break
    return per_client


def _assemble_shards(
    train_assign: list[list[np.ndarray]],
    test_assign: list[list[np.ndarray]],
) -> list[ClientShard]:
    shards = []
    for cid, (tr, te) in enumerate(zip(train_assign, test_assign)):
        train_idx = np.sort(np.concatenate(tr)) if tr else np.empty(0, dtype=np.int64)
        test_idx = np.sort(np.concatenate(te)) if te else np.empty(0, dtype=np.int64)
        if train_idx.size == 0:
            raise ValueError(f"client {cid} received an empty train shard")
        if test_idx.size == 0:
            raise ValueError(f"client {cid} received an empty test shard")
        shards.append(ClientShard(cid, train_idx, test_idx))
    return shards


def partition_pathological(
    train_labels,
    test_labels,
    num_classes: int,
    num_clients: int = 12,
    seed: int = 0,
    classes_per_client: int = 2,
    max_retries: int = 1000,
) -> list[ClientShard]:
    """Give each client a random pair of classes and a random slice of each.

    Each class's sample pool is cut into contiguous random-size portions (at
    least 1 sample each) among the clients assigned that class. Class-to-client
    assignments leaving a class unowned, or owned by more clients than it has
    samples, are re-drawn up to ``max_retries`` times.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if num_clients * classes_per_client < num_classes:
        raise ValueError(
            f"{num_clients} clients x {classes_per_client} classes each cannot "
            f"cover {num_classes} classes"
        )
    hist = np.bincount(train_labels, minlength=num_classes)
    if np.any(hist == 0):
        raise ValueError(f"class {int(np.argmin(hist))} has no training samples")

    rng = np.random.default_rng(seed)
    assignment = None
    for _ in range(max_retries):
        cand = [
            rng.choice(num_classes, size=classes_per_client, replace=False)
            for _ in range(num_clients)
        ]
        owners_per_class = np.bincount(np.concatenate(cand), minlength=num_classes)
        if np.all(owners_per_class >= 1) and np.all(owners_per_class <= hist):
            assignment = cand
            break
    if assignment is None:
        raise RuntimeError(
            f"could not draw a feasible class assignment in {max_retries} tries"
        )

    train_assign: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    train_counts = np.zeros((num_clients, num_classes), dtype=np.int64)
    for c in range(num_classes):
        owners = [i for i in range(num_clients) if c in assignment[i]]
        pool = np.flatnonzero(train_labels == c)
        k = len(owners)
        # Uniform random composition of the pool into k parts, each >= 1.
        if k == 1:
            sizes = np.array([pool.size])
        else:
            cuts = np.sort(rng.choice(pool.size - 1, size=k - 1, replace=False)) + 1
            sizes = np.diff(np.concatenate(([0], cuts, [pool.size])))
        order = rng.permutation(k)
        start = 0
        for j, size in enumerate(sizes):
            owner = owners[order[j]]
            train_assign[owner].append(pool[start : start + size])
            train_counts[owner, c] = size
            start += size

    test_assign = _mirror_test_indices(train_counts, test_labels, num_classes)
    return _assemble_shards(train_assign, test_assign)


def partition_practical(
    train_labels,
    test_labels,
    num_classes: int,
    num_clients: int = 12,
    seed: int = 0,
) -> list[ClientShard]:
    """Cut every class into 80%/10%/1%x10 shards and deal one shard per class
    to each client, so every client holds all classes in skewed proportions."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if num_clients != len(PRACTICAL_FRACTIONS):
        raise ValueError(
            f"practical scheme defines shard fractions for "
            f"{len(PRACTICAL_FRACTIONS)} clients, got {num_clients}"
        )
    hist = np.bincount(train_labels, minlength=num_classes)
    small = np.flatnonzero(hist < num_clients)
    if small.size:
        raise ValueError(
            f"class {int(small[0])} has {int(hist[small[0]])} training samples, "
            f"fewer than the {num_clients} required to give every client one"
        )

    rng = np.random.default_rng(seed)
    train_assign: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    train_counts = np.zeros((num_clients, num_classes), dtype=np.int64)
    for c in range(num_classes):
        pool = np.flatnonzero(train_labels == c)
        pool = pool[rng.permutation(pool.size)]
        sizes = largest_remainder(pool.size, PRACTICAL_FRACTIONS, minimum=1)
        clients = rng.permutation(num_clients)
        start = 0
        for j, size in enumerate(sizes):
            owner = int(clients[j])
            train_assign[owner].append(pool[start : start + size])
            train_counts[owner, c] = size
            start += size

    test_assign = _mirror_test_indices(train_counts, test_labels, num_classes)
    return _assemble_shards(train_assign, test_assign)


def describe(shards, train_labels, test_labels, num_classes: int) -> list[tuple]:
    """Per-client class histogram rows: (client, class, train_count, test_count)."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    rows = []
    for shard in shards:
        tr = np.bincount(train_labels[shard.train_indices], minlength=num_classes)
        te = np.bincount(test_labels[shard.test_indices], minlength=num_classes)
        for c in range(num_classes):
            rows.append((shard.client_id, c, int(tr[c]), int(te[c])))
    return rows


def describe_csv(shards, train_labels, test_labels, num_classes: int) -> str:
    lines = ["client,class,train_count,test_count"]
    for client, cls, tr, te in describe(shards, train_labels, test_labels, num_classes):
        lines.append(f"{client},{cls},{tr},{te}")
    return "\n".join(lines) + "\n"
