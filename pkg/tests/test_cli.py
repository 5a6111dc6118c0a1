import json

import numpy as np
import pytest

from tfcse.cli import main
from tfcse.datasets import read_manifest


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


SMOKE_DATA = ["--scenes-train", "3", "--scenes-test", "2", "--duration", "3",
              "--sample-rate", "8000", "--mics", "2", "--classes", "3",
              "--max-overlap", "2", "--events", "4",
              "--event-duration", "0.3,0.8", "--seed", "3"]
SMOKE_MODEL = ["--window", "128", "--frames", "64", "--pool-widths", "4,4,4",
               "--conv-filters", "4", "--gru-units", "8", "--fc-units", "8"]
SMOKE_TRAIN = ["--epochs", "2", "--batch", "8", "--patience", "1", "--seed", "1"]


class TestParams:
    def test_baseline(self, capsys):
        code, out = run_cli(capsys, "params", "--se", "none")
        assert code == 0
        assert out.strip() == "496587"

    def test_with_attention(self, capsys):
        code, out = run_cli(capsys, "params", "--se", "tfc-concurrent",
                            "--agg", "max", "--r", "8")
        assert code == 0
        assert out.strip() == "500067"

    def test_delta_is_attention_overhead(self, capsys):
        _, base = run_cli(capsys, "params", "--se", "none")
        _, full = run_cli(capsys, "params", "--se", "tfc-concurrent",
                          "--agg", "max", "--r", "8")
        assert int(full) - int(base) == 3480

    def test_reduction_ratio_sweep(self, capsys):
        counts = {}
        for r in ("2", "4", "8", "16"):
            _, out = run_cli(capsys, "params", "--se", "tfc-concurrent", "--r", r)
            counts[r] = int(out)
        assert counts["2"] > counts["4"] > counts["8"] > counts["16"]

    def test_aggregation_warning_when_not_concurrent(self, capsys):
        with pytest.warns(UserWarning, match="no effect"):
            run_cli(capsys, "params", "--se", "c", "--agg", "add")


class TestGradcheckCommand:
    def test_prints_pass_lines(self, capsys):
        code, out = run_cli(capsys, "gradcheck")
        assert code == 0
        assert "PASS" in out and "FAIL" not in out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(out)] + SMOKE_DATA) == 0
    return out / "manifest.csv"


class TestPipeline:

    def test_synth_manifest(self, dataset):
        rows = read_manifest(dataset)
        assert [r[2] for r in rows] == ["train"] * 3 + ["test"] * 2

    def test_features_cache(self, dataset, tmp_path, capsys):
        code, out = run_cli(capsys, "features", "--manifest", str(dataset),
                            "--out", str(tmp_path / "cache"),
                            "--window", "128", "--frames", "64", "--classes", "3")
        assert code == 0
        cache_manifest = tmp_path / "cache" / "features_manifest.csv"
        assert cache_manifest.exists()
        row = read_manifest(cache_manifest)[0]
        data = np.load(row[0])
        assert data["chunks"].shape[1:] == (64, 64, 4)
        assert data["roll"].shape[1] == 3

    def test_train_eval_cycle(self, dataset, tmp_path, capsys):
        run_dir = tmp_path / "run"
        code, out = run_cli(capsys, "train", "--manifest", str(dataset),
                            "--classes", "3", *SMOKE_MODEL, *SMOKE_TRAIN,
                            "--se", "tf", "--out", str(run_dir))
        assert code == 0
        assert "split=0 F1=" in out and "mean F1=" in out and "parameters=" in out
        assert (run_dir / "split0.ckpt").exists()
        assert (run_dir / "split0_classes.csv").exists()
        history = json.loads((run_dir / "split0_history.json").read_text())
        assert len(history) == 2

        code, out = run_cli(capsys, "eval", "--checkpoint", str(run_dir / "split0.ckpt"),
                            "--manifest", str(dataset), "--window", "128",
                            "--frames", "64")
        assert code == 0
        assert out.startswith("F1=")

    def test_train_synthetic_in_memory(self, capsys):
        code, out = run_cli(capsys, "train", *SMOKE_DATA, *SMOKE_MODEL, *SMOKE_TRAIN,
                            "--se", "none")
        assert code == 0
        assert "mean F1=" in out

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        config = tmp_path / "exp.json"
        config.write_text(json.dumps({"se": "tfc-concurrent", "agg": "max", "r": 8}))
        _, out = run_cli(capsys, "--config", str(config), "params")
        assert out.strip() == "500067"
        # explicit flag beats the file
        _, out = run_cli(capsys, "--config", str(config), "params", "--se", "none")
        assert out.strip() == "496587"


class TestDeterminism:
    def test_same_seed_same_report(self, capsys):
        args = ["train", *SMOKE_DATA, *SMOKE_MODEL, *SMOKE_TRAIN, "--se", "c", "--r", "2"]
        _, a = run_cli(capsys, *args)
        _, b = run_cli(capsys, *args)
        assert a == b
