"""Discovery and strict parsing of a fedsim run directory.

A run directory holds ``manifest.json``, ``partition.csv``, and per
(algorithm, seed) triple ``rounds_{alg}_{seed}.csv``, ``summary_{alg}_{seed}.json``
and ``kde_{alg}_{seed}.csv``. This module validates every header it reads and
never recomputes anything: arrays are the CSV values, verbatim.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROUNDS_RE = re.compile(r"rounds_([A-Za-z0-9]+)_(\d+)\.csv$")
KDE_HEADER = ["grid", "density"]


class SchemaError(Exception):
    """A file is missing or its contents do not match the declared schema."""


@dataclass(frozen=True)
class RoundsTable:
    """One rounds CSV: per-round scalars plus the per-client accuracy matrix."""

    algorithm: str
    seed: int
    rounds: np.ndarray
    train_loss: np.ndarray
    client_accuracies: np.ndarray  # (n_rounds, n_clients)
    mean_acc: np.ndarray
    combined_acc: np.ndarray


@dataclass(frozen=True)
class DensityTable:
    algorithm: str
    seed: int
    grid: np.ndarray
    density: np.ndarray


@dataclass(frozen=True)
class RunHandle:
    run_dir: Path
    manifest: dict
    pairs: tuple  # ((algorithm, seed), ...) sorted

    @property
    def algorithms(self) -> tuple:
        seen = []
        for alg, _ in self.pairs:
            if alg not in seen:
                seen.append(alg)
        return tuple(seen)

    def seeds(self, algorithm: str) -> tuple:
        return tuple(s for a, s in self.pairs if a == algorithm)


def open_run(run_dir) -> RunHandle:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise SchemaError(f"{run_dir}: not a directory")
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise SchemaError(f"{manifest_path}: missing manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON ({exc})") from exc

    pairs = []
    for path in run_dir.iterdir():
        m = ROUNDS_RE.fullmatch(path.name)
        if m:
            pairs.append((m.group(1), int(m.group(2))))
    if not pairs:
        raise SchemaError(f"{run_dir}: no rounds_*.csv files found")
    pairs.sort()
    handle = RunHandle(run_dir, manifest, tuple(pairs))
    # Every pair must have its companion kde file; headers checked on load.
    for alg, seed in pairs:
        kde = run_dir / f"kde_{alg}_{seed}.csv"
        if not kde.is_file():
            raise SchemaError(f"{kde}: missing density file")
    return handle


def _read_csv(path: Path) -> tuple:
    if not path.is_file():
        raise SchemaError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    return rows[0], rows[1:]


def load_rounds(handle: RunHandle, algorithm: str, seed: int) -> RoundsTable:
    path = handle.run_dir / f"rounds_{algorithm}_{seed}.csv"
    header, rows = _read_csv(path)
    if header[:4] != ["round", "algorithm", "seed", "train_loss"] or header[-2:] != [
        "mean_acc",
        "combined_acc",
    ]:
        raise SchemaError(f"{path}: unexpected header {header!r}")
    n_clients = len(header) - 6
    expected_accs = [f"acc_client_{i}" for i in range(n_clients)]
    if n_clients < 1 or header[4:-2] != expected_accs:
        raise SchemaError(f"{path}: unexpected accuracy columns in header {header!r}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    rounds, loss, accs, mean_acc, combined = [], [], [], [], []
    for row in rows:
        if len(row) != len(header):
            raise SchemaError(f"{path}: row width {len(row)} != header width {len(header)}")
        if row[1] != algorithm or int(row[2]) != seed:
            raise SchemaError(
                f"{path}: row tagged ({row[1]}, {row[2]}), expected ({algorithm}, {seed})"
            )
        rounds.append(int(row[0]))
        loss.append(float(row[3]))
        accs.append([float(v) for v in row[4:-2]])
        mean_acc.append(float(row[-2]))
        combined.append(float(row[-1]))
    return RoundsTable(
        algorithm=algorithm,
        seed=seed,
        rounds=np.array(rounds, dtype=np.int64),
        train_loss=np.array(loss),
        client_accuracies=np.array(accs),
        mean_acc=np.array(mean_acc),
        combined_acc=np.array(combined),
    )


def load_density(handle: RunHandle, algorithm: str, seed: int) -> DensityTable:
    path = handle.run_dir / f"kde_{algorithm}_{seed}.csv"
    header, rows = _read_csv(path)
    if header != KDE_HEADER:
        raise SchemaError(f"{path}: unexpected header {header!r}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    grid, density = [], []
    for row in rows:
        if len(row) != 2:
            raise SchemaError(f"{path}: row width {len(row)} != 2")
        grid.append(float(row[0]))
        density.append(float(row[1]))
    return DensityTable(algorithm, seed, np.array(grid), np.array(density))
