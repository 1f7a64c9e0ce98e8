"""Deterministic cross-silo federated learning simulator.

Implements shared-label-distribution weighted training (fedsld) alongside
fedavg and fedprox baselines, with non-IID partition schemes, accuracy and
fairness metrics, and a reproducible CLI experiment runner.
"""

__version__ = "0.1.0"

from .data import (
    ClientLabelCounts,
    Dataset,
    PriorDistribution,
    SyntheticSpec,
    compute_prior,
    count_labels,
    generate_synthetic,
    load_idx,
    split_train_test,
)
from .fed import (
    ClientView,
    FederationConfig,
    RoundRecord,
    aggregate,
    evaluate,
    local_update,
    make_views,
    run_federation,
)
from .metrics import DensityEstimate, MetricsSummary, bmcta, bta, kde_fairness, summarize
from .nncore import (
    BatchLabelDist,
    ModelSpec,
    ParamSet,
    backward,
    batch_label_dist,
    forward,
    init_params,
    loss_ce,
    loss_fedprox,
    loss_fedsld,
    sgd_step,
)
from .partition import (
    ClientShard,
    PartitionPlan,
    build_partition,
    partition_pathological,
    partition_practical,
)

__all__ = [
    "__version__",
    "ClientLabelCounts",
    "Dataset",
    "PriorDistribution",
    "SyntheticSpec",
    "compute_prior",
    "count_labels",
    "generate_synthetic",
    "load_idx",
    "split_train_test",
    "ClientShard",
    "PartitionPlan",
    "build_partition",
    "partition_pathological",
    "partition_practical",
    "BatchLabelDist",
    "ModelSpec",
    "ParamSet",
    "backward",
    "batch_label_dist",
    "forward",
    "init_params",
    "loss_ce",
    "loss_fedprox",
    "loss_fedsld",
    "sgd_step",
    "ClientView",
    "FederationConfig",
    "RoundRecord",
    "aggregate",
    "evaluate",
    "local_update",
    "make_views",
    "run_federation",
    "DensityEstimate",
    "MetricsSummary",
    "bmcta",
    "bta",
    "kde_fairness",
    "summarize",
]
