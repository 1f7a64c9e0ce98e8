"""Render convergence and fairness figures from a run directory.

All numbers come verbatim from the run's CSVs; the only operations applied
here are display-level grouping (mean / min / max across seeds of the same
algorithm) and a pass-through sanity check on the stored densities.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .runs import RunHandle, SchemaError, load_density, load_rounds, open_run

DENSITY_INTEGRAL_TOL = 1e-3


def _gather_rounds(handle: RunHandle, algorithm: str):
    tables = [load_rounds(handle, algorithm, s) for s in handle.seeds(algorithm)]
    rounds = tables[0].rounds
    for t in tables[1:]:
        if not np.array_equal(t.rounds, rounds):
            raise SchemaError(
                f"{handle.run_dir}: seeds of {algorithm} cover different round ranges"
            )
    return rounds, tables


def plot_convergence(run_dir, out_path) -> Path:
    """Two panels: train loss and mean client accuracy vs round, one line per
    algorithm (mean across seeds with a min-max band)."""
    handle = open_run(run_dir)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for alg in handle.algorithms:
        rounds, tables = _gather_rounds(handle, alg)
        loss = np.stack([t.train_loss for t in tables])
        acc = np.stack([t.mean_acc for t in tables])
        for ax, series in ((ax_loss, loss), (ax_acc, acc)):
            ax.plot(rounds, series.mean(axis=0), marker=".", label=alg)
            ax.fill_between(
                rounds, series.min(axis=0), series.max(axis=0), alpha=0.2
            )
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("train loss")
    ax_acc.set_xlabel("round")
    ax_acc.set_ylabel("mean client accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    ax_loss.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_fairness(run_dir, out_path) -> Path:
    """Overlaid accuracy-density curves, one per (algorithm, seed), exactly as
    stored in the kde CSVs."""
    handle = open_run(run_dir)
    fig, ax = plt.subplots(figsize=(6, 4))
    grid_len = None
    for alg in handle.algorithms:
        for i, seed in enumerate(handle.seeds(alg)):
            table = load_density(handle, alg, seed)
            if grid_len is None:
                grid_len = table.grid.size
            elif table.grid.size != grid_len:
                raise SchemaError(
                    f"{handle.run_dir}/kde_{alg}_{seed}.csv: grid length "
                    f"{table.grid.size} != {grid_len} seen earlier"
                )
            integral = float(np.trapezoid(table.density, table.grid))
            if abs(integral - 1.0) > DENSITY_INTEGRAL_TOL:
                raise SchemaError(
                    f"{handle.run_dir}/kde_{alg}_{seed}.csv: stored density "
                    f"integrates to {integral}, not 1"
                )
            ax.plot(table.grid, table.density, label=alg if i == 0 else None)
    ax.set_xlabel("client accuracy")
    ax.set_ylabel("density")
    ax.set_xlim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
