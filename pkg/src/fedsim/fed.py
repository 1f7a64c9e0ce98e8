"""Round loop: broadcast, parallel local SGD, sample-count-weighted aggregation."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import nncore
from .alloc import largest_remainder
from .data import ClientLabelCounts, Dataset, PriorDistribution, compute_prior

ALGORITHMS = ("fedavg", "fedprox", "fedsld")


@dataclass(frozen=True)
class FederationConfig:
    num_rounds: int
    local_epochs: int
    batch_size: int
    learning_rate: float
    num_clients: int
    algorithm: str
    mu: float = 0.01  # fedprox only
    seed: int = 0
    stratified_batches: bool = False  # test mode: draw batches matching the prior

    def __post_init__(self) -> None:
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.num_clients < 2:
            raise ValueError("num_clients must be >= 2")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")


@dataclass(frozen=True)
class ClientView:
    """One client's immutable slice of the train and test data."""

    client_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass(frozen=True)
class RoundRecord:
    round: int  # 1-based
    train_loss: float
    client_accuracies: tuple
    duration: float


def make_views(train_ds: Dataset, test_ds: Dataset, shards) -> list[ClientView]:
    return [
        ClientView(
            shard.client_id,
            train_ds.features[shard.train_indices],
            train_ds.labels[shard.train_indices],
            test_ds.features[shard.test_indices],
            test_ds.labels[shard.test_indices],
        )
        for shard in shards
    ]


def client_round_rng(base_seed: int, client_id: int, round_idx: int) -> np.random.Generator:
    """Independent per-(client, round) stream; schedule- and order-invariant."""
    seq = np.random.SeedSequence(entropy=base_seed, spawn_key=(client_id, round_idx))
    return np.random.default_rng(seq)


def _uniform_batches(n: int, batch_size: int, rng: np.random.Generator) -> list:
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _stratified_batches(
    labels: np.ndarray, prior: PriorDistribution, batch_size: int, rng: np.random.Generator
) -> list:
    """Batches whose label composition equals the prior's largest-remainder quota.

    Requires the shard to divide evenly into such batches; this mode exists for
    trajectory-equivalence testing, not production runs.
    """
    quota = largest_remainder(batch_size, prior.probs)
    n = labels.size
    if n % batch_size != 0:
        raise ValueError("shard size not divisible by batch size; cannot stratify batches")
    n_batches = n // batch_size
    pools = []
    for c, q in enumerate(quota):
        pool = np.flatnonzero(labels == c)
        if pool.size != q * n_batches:
            raise ValueError(
                f"class {c} has {pool.size} samples, stratified batching needs {q * n_batches}"
            )
        pools.append(pool[rng.permutation(pool.size)])
    batches = []
    for b in range(n_batches):
        parts = [pool[b * q : (b + 1) * q] for pool, q in zip(pools, quota) if q]
        batch = np.concatenate(parts)
        batches.append(batch[rng.permutation(batch.size)])
    return batches


def _objective(cfg: FederationConfig, global_params, prior):
    if cfg.algorithm == "fedsld":
        if prior is None:
            raise ValueError("fedsld requires a prior distribution")
        return nncore.SldObjective(prior)
    if cfg.algorithm == "fedprox":
        return nncore.ProxObjective(anchor=global_params, mu=cfg.mu)
    return nncore.CeObjective()


def local_update(
    view: ClientView,
    model_spec: nncore.ModelSpec,
    global_params: nncore.ParamSet,
    cfg: FederationConfig,
    round_idx: int,
    prior: PriorDistribution | None = None,
):
    """Run E local epochs of minibatch SGD; returns (params, final-epoch mean loss)."""
    n = view.train_y.size
    if n == 0:
        raise ValueError(f"client {view.client_id}: empty shard")
    rng = client_round_rng(cfg.seed, view.client_id, round_idx)
    objective = _objective(cfg, global_params, prior)
    params = global_params
    mean_loss = 0.0
    for _ in range(cfg.local_epochs):
        if cfg.stratified_batches:
            if prior is None:
                raise ValueError("stratified batching requires a prior distribution")
            batches = _stratified_batches(view.train_y, prior, cfg.batch_size, rng)
        else:
            batches = _uniform_batches(n, cfg.batch_size, rng)
        losses = []
        for idx in batches:
            loss, grads = nncore.loss_and_grad(
                model_spec, params, view.train_x[idx], view.train_y[idx], objective
            )
            params = nncore.sgd_step(params, grads, cfg.learning_rate)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
    return params, mean_loss


def aggregate(updates) -> nncore.ParamSet:
    """Sample-count-weighted average of client models.

    ``updates`` holds (client_id, params, n_i) triples; summation runs in
    client-id order so the result is bitwise independent of input ordering.
    """
    updates = sorted(updates, key=lambda u: u[0])
    if not updates:
        raise ValueError("empty update list")
    ids = [u[0] for u in updates]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client ids in updates")
    counts = np.array([u[2] for u in updates], dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError("all client sample counts must be positive")
    ref = updates[0][1]
    for _, ps, _ in updates[1:]:
        nncore.require_congruent(ref, ps)
    # Identical inputs aggregate to themselves exactly (no rounding drift).
    blobs = {tuple(arr.tobytes() for arr in ps.arrays()) for _, ps, _ in updates}
    if len(blobs) == 1:
        return ref
    weights = counts / counts.sum()
    arrays = []
    for t in range(len(ref.items)):
        acc = np.zeros_like(ref.arrays()[t])
        for w, (_, ps, _) in zip(weights, updates):
            acc = acc + w * ps.arrays()[t]
        arrays.append(acc)
    return ref.replace_arrays(arrays)


def evaluate(params: nncore.ParamSet, model_spec: nncore.ModelSpec, views) -> list:
    """Per-client test accuracy; argmax prediction, ties to the lowest class."""
    accs = []
    for view in views:
        if view.test_y.size == 0:
            raise ValueError(f"client {view.client_id}: empty test shard")
        preds = np.argmax(nncore.forward(model_spec, params, view.test_x), axis=1)
        accs.append(float(np.mean(preds == view.test_y)))
    return accs


def run_federation(
    model_spec: nncore.ModelSpec,
    init_params: nncore.ParamSet,
    views,
    counts: ClientLabelCounts,
    cfg: FederationConfig,
    workers: int = 1,
):
    """Full round loop; deterministic given cfg.seed for any worker count."""
    if len(views) != cfg.num_clients:
        raise ValueError(f"config says {cfg.num_clients} clients, got {len(views)} views")
    if counts.num_clients != len(views):
        raise ValueError("counts row count does not match number of clients")
    for view in views:
        hist = np.bincount(view.train_y, minlength=counts.num_classes)
        if not np.array_equal(hist, counts.counts[view.client_id]):
            raise ValueError(
                f"client {view.client_id}: shared label counts do not match shard histogram"
            )

    prior = compute_prior(counts) if cfg.algorithm == "fedsld" or cfg.stratified_batches else None
    client_n = counts.per_client
    total_n = counts.total
    params = init_params
    records = []
    for r in range(1, cfg.num_rounds + 1):
        t0 = time.perf_counter()

        def _update(view):
            return local_update(view, model_spec, params, cfg, r, prior)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_update, views))
        else:
            results = [_update(v) for v in views]

        updates = [
            (view.client_id, ps, int(client_n[view.client_id]))
            for view, (ps, _) in zip(views, results)
        ]
        params = aggregate(updates)
        losses = np.array([loss for _, loss in results])
        weights = np.array([client_n[v.client_id] for v in views], dtype=np.float64) / total_n
        train_loss = float(np.dot(weights, losses))
        accs = evaluate(params, model_spec, views)
        records.append(RoundRecord(r, train_loss, tuple(accs), time.perf_counter() - t0))
    return params, records


def records_to_csv(records, algorithm: str, seed: int, test_sizes) -> str:
    """Fixed-schema CSV; floats via repr so identical runs are byte-identical."""
    test_sizes = np.asarray(test_sizes, dtype=np.int64)
    n_clients = test_sizes.size
    header = (
        "round,algorithm,seed,train_loss,"
        + ",".join(f"acc_client_{i}" for i in range(n_clients))
        + ",mean_acc,combined_acc"
    )
    lines = [header]
    for rec in records:
        accs = np.asarray(rec.client_accuracies)
        if accs.size != n_clients:
            raise ValueError("accuracy vector length does not match client count")
        correct = np.rint(accs * test_sizes)
        combined = float(correct.sum() / test_sizes.sum())
        fields = [str(rec.round), algorithm, str(seed), repr(rec.train_loss)]
        fields += [repr(float(a)) for a in accs]
        fields += [repr(float(accs.mean())), repr(combined)]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"
