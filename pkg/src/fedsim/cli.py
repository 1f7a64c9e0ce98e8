"""Experiment runner: config parsing, run-directory artifacts, CSV/JSON emission."""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, fed, metrics, nncore, partition
from .data import (
    Dataset,
    SyntheticSpec,
    count_labels,
    generate_synthetic,
    load_idx,
    split_train_test,
)

OUT_ROOT_ENV = "FEDSIM_OUT_ROOT"

DEFAULTS = {
    "dataset": {
        "type": "synthetic",
        "num_classes": 4,
        "n_features": 8,
        "n_per_class": 500,
        "means": None,
        "mean_scale": 3.0,
        "cov_scale": 1.0,
        "seed": 0,
        "test_fraction": None,  # 1/6 for idx data, 0.2 for synthetic
        "images": None,
        "labels": None,
        "extra_images": None,
        "extra_labels": None,
    },
    "partition": {
        "scheme": "practical",
        "num_clients": 12,
        "classes_per_client": 2,
        "seed": 0,
    },
    "model": {
        "type": "softmax",
        "hidden": [500],
        "conv_channels": [32, 64],
        "num_classes": None,  # inherits the dataset's class count
    },
    "federation": {
        "rounds": 30,
        "local_epochs": 5,
        "batch_size": 32,
        "learning_rate": 0.05,
        "mu": 0.01,
    },
    "algorithms": ["fedavg", "fedprox", "fedsld"],
    "seeds": [0],
    "output_dir": "runs/experiment",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config field {path + key!r}")
        if isinstance(defaults[key], dict) and value is not None:
            merged[key] = _merge(defaults[key], value, path + key + ".")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def resolve_config(raw: dict) -> dict:
    """Deep-merge onto defaults and validate; every default is materialized."""
    cfg = _merge(DEFAULTS, raw)

    ds = cfg["dataset"]
    _require(ds["type"] in ("synthetic", "idx"), "dataset.type", f"unknown type {ds['type']!r}")
    if ds["type"] == "synthetic":
        _require(isinstance(ds["num_classes"], int) and ds["num_classes"] >= 2,
                 "dataset.num_classes", "must be an integer >= 2")
        _require(isinstance(ds["n_features"], int) and ds["n_features"] >= 1,
                 "dataset.n_features", "must be a positive integer")
        if ds["test_fraction"] is None:
            ds["test_fraction"] = 0.2
    else:
        _require(ds["images"] and ds["labels"], "dataset.images", "idx datasets need images and labels paths")
        if ds["test_fraction"] is None:
            ds["test_fraction"] = 1.0 / 6.0
    _require(0.0 < float(ds["test_fraction"]) < 1.0, "dataset.test_fraction", "must be in (0, 1)")

    part = cfg["partition"]
    _require(part["scheme"] in ("pathological", "practical"), "partition.scheme",
             f"unknown scheme {part['scheme']!r}")
    _require(isinstance(part["num_clients"], int) and part["num_clients"] >= 2,
             "partition.num_clients", "must be an integer >= 2")

    model = cfg["model"]
    _require(model["type"] in ("softmax", "mlp", "cnn"), "model.type",
             f"unknown type {model['type']!r}")
    if model["type"] == "mlp":
        _require(isinstance(model["hidden"], list) and model["hidden"]
                 and all(isinstance(h, int) and h >= 1 for h in model["hidden"]),
                 "model.hidden", "must be a nonempty list of positive integers")
    if model["num_classes"] is not None and ds["type"] == "synthetic":
        _require(model["num_classes"] == ds["num_classes"], "model.num_classes",
                 f"model declares {model['num_classes']} classes but dataset has {ds['num_classes']}")

    fedc = cfg["federation"]
    for field, minimum in (("rounds", 1), ("local_epochs", 1), ("batch_size", 1)):
        _require(isinstance(fedc[field], int) and fedc[field] >= minimum,
                 f"federation.{field}", f"must be an integer >= {minimum}")
    _require(float(fedc["learning_rate"]) > 0, "federation.learning_rate", "must be positive")
    _require(float(fedc["mu"]) >= 0, "federation.mu", "must be nonnegative")

    _require(isinstance(cfg["algorithms"], list) and cfg["algorithms"],
             "algorithms", "must be a nonempty list")
    for alg in cfg["algorithms"]:
        _require(alg in fed.ALGORITHMS, "algorithms", f"unknown algorithm {alg!r}")
    _require(isinstance(cfg["seeds"], list) and cfg["seeds"]
             and all(isinstance(s, int) for s in cfg["seeds"]),
             "seeds", "must be a nonempty list of integers")
    _require(isinstance(cfg["output_dir"], str) and cfg["output_dir"],
             "output_dir", "must be a nonempty path")
    return cfg


def load_config(path) -> dict:
    """Read a config file; a previously written manifest is accepted as-is."""
    text = Path(path).read_text()
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    if "config" in raw and "version" in raw:  # manifest round-trip
        raw = raw["config"]
    return resolve_config(raw)


def build_dataset(cfg: dict) -> tuple[Dataset, Dataset]:
    ds = cfg["dataset"]
    if ds["type"] == "synthetic":
        spec = SyntheticSpec(
            num_classes=ds["num_classes"],
            n_features=ds["n_features"],
            n_per_class=ds["n_per_class"],
            means=None if ds["means"] is None else tuple(map(tuple, ds["means"])),
            mean_scale=float(ds["mean_scale"]),
            cov_scale=float(ds["cov_scale"]),
            seed=int(ds["seed"]),
        )
        full = generate_synthetic(spec)
    else:
        full = load_idx(ds["images"], ds["labels"])
        if ds["extra_images"]:
            extra = load_idx(ds["extra_images"], ds["extra_labels"])
            if extra.num_classes != full.num_classes:
                raise ConfigError(
                    f"dataset.extra_images: class count {extra.num_classes} "
                    f"differs from {full.num_classes}"
                )
            full = Dataset(
                np.concatenate([full.features, extra.features]),
                np.concatenate([full.labels, extra.labels]),
                full.num_classes,
            )
    model_c = cfg["model"]["num_classes"]
    if model_c is not None and model_c != full.num_classes:
        raise ConfigError(
            f"model.num_classes: model declares {model_c} classes "
            f"but dataset has {full.num_classes}"
        )
    return split_train_test(full, float(ds["test_fraction"]), int(ds["seed"]))


def build_model_spec(cfg: dict, train: Dataset) -> nncore.ModelSpec:
    model = cfg["model"]
    n_in = train.n_features
    c = train.num_classes
    if model["type"] == "softmax":
        layers = [nncore.Dense(n_in, c)]
        return nncore.ModelSpec(tuple(layers), (n_in,), c)
    if model["type"] == "mlp":
        layers = []
        prev = n_in
        for h in model["hidden"]:
            layers += [nncore.Dense(prev, h), nncore.Relu()]
            prev = h
        layers.append(nncore.Dense(prev, c))
        return nncore.ModelSpec(tuple(layers), (n_in,), c)
    # cnn: square single-channel images
    side = int(round(n_in ** 0.5))
    if side * side != n_in:
        raise ConfigError(f"model.type: cnn needs square images, got {n_in} features")
    ch = model["conv_channels"]
    if len(ch) != 2:
        raise ConfigError("model.conv_channels: expected exactly two channel counts")
    shape = (1, side, side)
    layers = [nncore.Conv2d(1, ch[0]), nncore.Relu(), nncore.Conv2d(ch[0], ch[1]), nncore.Relu(),
              nncore.Flatten()]
    flat = ch[1] * (((side - 4) // 2 - 4) // 2) ** 2
    layers += [nncore.Dense(flat, 500), nncore.Relu(), nncore.Dense(500, c)]
    return nncore.ModelSpec(tuple(layers), shape, c)


def build_partition(cfg: dict, train: Dataset, test: Dataset):
    part = cfg["partition"]
    plan = partition.PartitionPlan(
        scheme=part["scheme"],
        num_clients=part["num_clients"],
        seed=int(part["seed"]),
        classes_per_client=part["classes_per_client"],
    )
    return partition.build_partition(plan, train.labels, test.labels, train.num_classes)


def _resolve_out_dir(cfg: dict, out_override) -> Path:
    out = Path(out_override) if out_override else Path(cfg["output_dir"])
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _prepare_out_dir(out: Path, overwrite: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise RuntimeError(
                f"output directory {out} exists and is not empty; pass --overwrite to replace it"
            )
    out.mkdir(parents=True, exist_ok=True)


def _write_manifest(out: Path, cfg: dict) -> None:
    manifest = {"tool": "fedsim", "version": __version__, "config": cfg}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_experiment(config_path, out_override=None, overwrite=False, workers=1) -> int:
    cfg = load_config(config_path)
    out = _resolve_out_dir(cfg, out_override)
    _prepare_out_dir(out, overwrite)

    train, test = build_dataset(cfg)
    shards = build_partition(cfg, train, test)
    counts = count_labels([train.labels[s.train_indices] for s in shards], train.num_classes)
    views = fed.make_views(train, test, shards)
    model_spec = build_model_spec(cfg, train)
    test_sizes = [s.test_indices.size for s in shards]

    _write_manifest(out, cfg)
    (out / "partition.csv").write_text(
        partition.describe_csv(shards, train.labels, test.labels, train.num_classes)
    )

    fedc = cfg["federation"]
    for algorithm in cfg["algorithms"]:
        for seed in cfg["seeds"]:
            run_cfg = fed.FederationConfig(
                num_rounds=fedc["rounds"],
                local_epochs=fedc["local_epochs"],
                batch_size=fedc["batch_size"],
                learning_rate=float(fedc["learning_rate"]),
                num_clients=cfg["partition"]["num_clients"],
                algorithm=algorithm,
                mu=float(fedc["mu"]),
                seed=int(seed),
            )
            init = nncore.init_params(model_spec, seed=int(seed))
            _, records = fed.run_federation(model_spec, init, views, counts, run_cfg, workers=workers)

            tag = f"{algorithm}_{seed}"
            (out / f"rounds_{tag}.csv").write_text(
                fed.records_to_csv(records, algorithm, int(seed), test_sizes)
            )
            summary = metrics.summarize(records, test_sizes)
            best_round = max(records, key=lambda r: np.mean(r.client_accuracies))
            density = metrics.kde_fairness(np.asarray(best_round.client_accuracies))
            payload = dataclasses.asdict(summary)
            payload["algorithm"] = algorithm
            payload["seed"] = int(seed)
            payload["kde_bandwidth"] = density.bandwidth
            (out / f"summary_{tag}.json").write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n"
            )
            (out / f"kde_{tag}.csv").write_text(metrics.density_to_csv(density))
    return 0


def describe_partition(config_path, out_override=None, overwrite=False) -> int:
    cfg = load_config(config_path)
    out = _resolve_out_dir(cfg, out_override)
    _prepare_out_dir(out, overwrite)
    train, test = build_dataset(cfg)
    shards = build_partition(cfg, train, test)
    (out / "partition.csv").write_text(
        partition.describe_csv(shards, train.labels, test.labels, train.num_classes)
    )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedsim", description="Federated learning simulator")
    parser.add_argument("--version", action="version", version=f"fedsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the (algorithm x seed) experiment grid")
    p_run.add_argument("config", help="experiment config (YAML) or a manifest.json")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.add_argument("--overwrite", action="store_true", help="replace an existing run directory")
    p_run.add_argument("--workers", type=int, default=1, help="client-update worker threads")

    p_desc = sub.add_parser("describe", help="write partition.csv without training")
    p_desc.add_argument("config")
    p_desc.add_argument("--out", default=None)
    p_desc.add_argument("--overwrite", action="store_true")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run_experiment(args.config, args.out, args.overwrite, args.workers)
        return describe_partition(args.config, args.out, args.overwrite)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
