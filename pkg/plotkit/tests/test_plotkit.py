import csv
import shutil
import subprocess
import sys

import numpy as np
import pytest
import yaml

from plotkit import (
    SchemaError,
    load_density,
    load_rounds,
    open_run,
    plot_convergence,
    plot_fairness,
)
from plotkit.cli import main

RUN_CONFIG = {
    "dataset": {
        "type": "synthetic",
        "num_classes": 3,
        "n_features": 4,
        "n_per_class": 120,
        "mean_scale": 2.0,
        "seed": 0,
    },
    "partition": {"scheme": "practical", "num_clients": 12, "seed": 0},
    "model": {"type": "softmax"},
    "federation": {"rounds": 3, "local_epochs": 1, "batch_size": 16, "learning_rate": 0.05},
    "algorithms": ["fedavg", "fedsld"],
    "seeds": [0, 1],
    "output_dir": "run",
}


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    """A real run directory produced through the fedsim CLI."""
    root = tmp_path_factory.mktemp("fixture")
    cfg = root / "config.yaml"
    cfg.write_text(yaml.safe_dump(RUN_CONFIG))
    out = root / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "fedsim.cli", "run", str(cfg), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return out


class TestRunHandle:
    def test_discovery(self, run_dir):
        handle = open_run(run_dir)
        assert handle.algorithms == ("fedavg", "fedsld")
        assert handle.seeds("fedavg") == (0, 1)
        assert handle.manifest["tool"] == "fedsim"

    def test_missing_dir(self, tmp_path):
        with pytest.raises(SchemaError, match="not a directory"):
            open_run(tmp_path / "nope")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SchemaError, match="manifest"):
            open_run(tmp_path)

    def test_missing_kde_companion(self, run_dir, tmp_path):
        broken = tmp_path / "run"
        shutil.copytree(run_dir, broken)
        (broken / "kde_fedavg_0.csv").unlink()
        with pytest.raises(SchemaError, match="kde_fedavg_0.csv"):
            open_run(broken)


class TestSchemaDrift:
    def test_rounds_header_drift_fails_loudly(self, run_dir, tmp_path):
        broken = tmp_path / "run"
        shutil.copytree(run_dir, broken)
        target = broken / "rounds_fedavg_0.csv"
        lines = target.read_text().splitlines()
        lines[0] = lines[0].replace("train_loss", "loss")
        target.write_text("\n".join(lines) + "\n")
        handle = open_run(broken)
        with pytest.raises(SchemaError, match="rounds_fedavg_0.csv"):
            load_rounds(handle, "fedavg", 0)

    def test_kde_header_drift_fails_loudly(self, run_dir, tmp_path):
        broken = tmp_path / "run"
        shutil.copytree(run_dir, broken)
        target = broken / "kde_fedavg_0.csv"
        lines = target.read_text().splitlines()
        lines[0] = "x,y"
        target.write_text("\n".join(lines) + "\n")
        handle = open_run(broken)
        with pytest.raises(SchemaError, match="kde_fedavg_0.csv"):
            load_density(handle, "fedavg", 0)

    def test_mismatched_grid_lengths(self, run_dir, tmp_path):
        broken = tmp_path / "run"
        shutil.copytree(run_dir, broken)
        target = broken / "kde_fedsld_1.csv"
        lines = target.read_text().splitlines()
        target.write_text("\n".join(lines[:-10]) + "\n")
        with pytest.raises(SchemaError, match="grid length"):
            plot_fairness(broken, tmp_path / "f.svg")


class TestRoundTrip:
    def test_rounds_values_equal_csv_exactly(self, run_dir):
        handle = open_run(run_dir)
        for alg, seed in handle.pairs:
            table = load_rounds(handle, alg, seed)
            with open(run_dir / f"rounds_{alg}_{seed}.csv", newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            for i, row in enumerate(rows):
                assert table.rounds[i] == int(row[0])
                assert table.train_loss[i] == float(row[3])
                assert table.mean_acc[i] == float(row[-2])
                assert table.combined_acc[i] == float(row[-1])
                assert np.array_equal(
                    table.client_accuracies[i], [float(v) for v in row[4:-2]]
                )

    def test_density_values_equal_csv_exactly(self, run_dir):
        handle = open_run(run_dir)
        for alg, seed in handle.pairs:
            table = load_density(handle, alg, seed)
            with open(run_dir / f"kde_{alg}_{seed}.csv", newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            assert np.array_equal(table.grid, [float(r[0]) for r in rows])
            assert np.array_equal(table.density, [float(r[1]) for r in rows])


class TestRendering:
    def test_convergence_svg(self, run_dir, tmp_path):
        out = plot_convergence(run_dir, tmp_path / "conv.svg")
        body = out.read_text()
        assert body.lstrip().startswith("<?xml")
        assert "<svg" in body

    def test_fairness_svg(self, run_dir, tmp_path):
        out = plot_fairness(run_dir, tmp_path / "fair.svg")
        assert "<svg" in out.read_text()

    def test_png_output(self, run_dir, tmp_path):
        out = plot_convergence(run_dir, tmp_path / "conv.png")
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_single_round_no_crash(self, tmp_path):
        cfg = dict(RUN_CONFIG)
        cfg["federation"] = dict(cfg["federation"], rounds=1)
        cfg_path = tmp_path / "config.yaml"
        cfg_path.write_text(yaml.safe_dump(cfg))
        out = tmp_path / "run"
        proc = subprocess.run(
            [sys.executable, "-m", "fedsim.cli", "run", str(cfg_path), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        plot_convergence(out, tmp_path / "conv.svg")
        plot_fairness(out, tmp_path / "fair.svg")


class TestCli:
    def test_convergence_command(self, run_dir, tmp_path):
        out = tmp_path / "conv.svg"
        assert main(["convergence", str(run_dir), "-o", str(out)]) == 0
        assert out.exists()

    def test_fairness_command(self, run_dir, tmp_path):
        out = tmp_path / "fair.svg"
        assert main(["fairness", str(run_dir), "-o", str(out)]) == 0
        assert out.exists()

    def test_bad_dir_exit_nonzero(self, tmp_path, capsys):
        assert main(["convergence", str(tmp_path / "nope"), "-o", "x.svg"]) == 2
        assert "not a directory" in capsys.readouterr().err
