"""Command-line contract: subcommand outputs, determinism, exit codes, and
model serialization round-trips."""

import csv
import hashlib
import json

import numpy as np
import pytest

from intervalnets.cli import main
from intervalnets.dataio import RunConfig, load_csv
from intervalnets.model_io import load_model, save_model
from intervalnets.workflows import run_training

TINY = {
    "dataset": "synthetic",
    "synth_k": 220,
    "split": [60, 10, 30],
    "window": 10,
    "n_step": 4,
    "n_x": 1,
    "n_d": 0,
    "n_y": 1,
    "model": "inode",
    "hidden": [4],
    "strategy": "cascade",
    "alpha": 0.9,
    "epochs": 3,
    "mbs": 8,
    "seed": 0,
}


def write_config(tmp_path, **overrides):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**TINY, **overrides}))
    return path


def file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestSerialization:
    @pytest.mark.parametrize("strategy,model", [
        ("cascade", "inode"), ("joint", "ilstm"),
        ("bnn", "node"), ("mcdropout", "node"), ("ensemble", "node"),
    ])
    def test_round_trip_all_kinds(self, tmp_path, strategy, model):
        config = RunConfig.from_dict({**TINY, "strategy": strategy, "model": model,
                                      "epochs": 2, "members": 2, "samples": 4, "hidden": [3]})
        run = run_training(config)
        path = tmp_path / "model.json"
        save_model(path, run.bundle)
        loaded = load_model(path)
        assert loaded.kind == run.bundle.kind
        assert loaded.spec == run.bundle.spec
        u = np.linspace(-1, 1, 6)
        a = loaded.predict_normalized(u, 0.0, seed=1)
        b = run.bundle.predict_normalized(u, 0.0, seed=1)
        np.testing.assert_allclose(a.y, b.y, atol=1e-12)
        np.testing.assert_allclose(a.lo, b.lo, atol=1e-12)

    def test_version_checked(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"format_version": 99, "kind": "interval"}))
        from intervalnets.errors import DataError

        with pytest.raises(DataError, match="version"):
            load_model(path)


class TestTrainCommand:
    def test_writes_model_log_and_manifest(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        assert (out / "model.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 0 and "inputs_sha256" in manifest
        lines = (out / "epochs.jsonl").read_text().strip().splitlines()
        assert len(lines) == 6  # two stages, three epochs each
        assert all("seconds" in json.loads(line) for line in lines)

    def test_same_config_and_seed_reproduces_model_hash(self, tmp_path):
        config = write_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(config), "--out", str(out1)]) == 0
        assert main(["train", "--config", str(config), "--out", str(out2)]) == 0
        assert file_hash(out1 / "model.json") == file_hash(out2 / "model.json")

    def test_flag_overrides_apply(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(config), "--strategy", "joint",
                     "--seed", "5", "--out", str(out)]) == 0
        bundle = load_model(out / "model.json")
        assert bundle.training["strategy"] == "joint"
        assert bundle.training["seed"] == 5

    def test_missing_config_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--out", "/tmp/x"])
        assert exc.value.code == 2

    def test_bad_alpha_flag_is_usage_error(self, tmp_path):
        config = write_config(tmp_path)
        with pytest.raises(SystemExit) as exc:
            main(["train", "--config", str(config), "--alpha", "1.5", "--out", str(tmp_path / "o")])
        assert exc.value.code == 2

    def test_unknown_config_key_exit_code(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({**TINY, "typo_key": 1}))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("trained")
    config = write_config(tmp_path, epochs=4)
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    return out / "model.json"


class TestEvalCommand:
    def test_eval_emits_metric_json(self, trained, capsys):
        assert main(["eval", "--model", str(trained), "--split", "test"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) >= {"rmse", "rmse_x100", "picp", "pinaw", "pinaw_x100", "cwc", "alpha", "eta"}

    def test_eval_deterministic(self, trained, capsys):
        main(["eval", "--model", str(trained), "--split", "val"])
        first = capsys.readouterr().out
        main(["eval", "--model", str(trained), "--split", "val"])
        assert capsys.readouterr().out == first

    def test_missing_model_is_data_error(self, capsys):
        assert main(["eval", "--model", "/nonexistent/model.json"]) == 3


class TestPredictCommand:
    def test_csv_contract(self, trained, tmp_path, capsys):
        out = tmp_path / "pred.csv"
        assert main(["predict", "--model", str(trained), "--split", "test",
                     "--out", str(out), "--no-figures"]) == 0
        with out.open() as handle:
            rows = list(csv.DictReader(handle))
        # test split of 220 samples at 60-10-30 is the final 66
        assert len(rows) == 66
        for row in rows:
            assert float(row["y_lo"]) <= float(row["y"]) <= float(row["y_hi"])

    def test_prediction_figure_rendered(self, trained, tmp_path):
        out = tmp_path / "pred.csv"
        assert main(["predict", "--model", str(trained), "--out", str(out)]) == 0
        assert out.with_suffix(".png").exists()


class TestAnalyzeCommand:
    def test_exports_heatmaps(self, trained, tmp_path):
        out = tmp_path / "analysis"
        assert main(["analyze", "--model", str(trained), "--out", str(out), "--no-figures"]) == 0
        index = json.loads((out / "index.json").read_text())
        assert index["files"]
        # one heatmap per weight tensor of the trained interval model
        bundle = load_model(trained)
        weights = [k for k in bundle.theta if ".W" in k or ".U" in k]
        assert len(index["files"]) == len(weights)

    def test_analyze_renders_figures(self, trained, tmp_path):
        out = tmp_path / "analysis_fig"
        assert main(["analyze", "--model", str(trained), "--out", str(out)]) == 0
        pngs = list(out.glob("*.png"))
        assert pngs

    def test_baseline_model_rejected(self, tmp_path, capsys):
        config = write_config(tmp_path, strategy="mcdropout", model="node", epochs=1, samples=4)
        out = tmp_path / "baseline"
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        code = main(["analyze", "--model", str(out / "model.json"), "--out", str(tmp_path / "x")])
        assert code == 3
        assert "no uncertainty parameters" in capsys.readouterr().err


class TestBenchmarkCommand:
    def test_single_cell_two_seeds(self, tmp_path):
        suite = tmp_path / "suite.json"
        suite.write_text(json.dumps({"cells": [{"name": "tiny", **TINY, "epochs": 2}]}))
        out = tmp_path / "bench"
        assert main(["benchmark", "--suite", str(suite), "--seeds", "2",
                     "--out", str(out), "--no-figures"]) == 0
        rows = json.loads((out / "benchmark.json").read_text())
        assert rows[0]["status"] == "ok"
        assert "rmse_x100_mean" in rows[0] and "rmse_x100_std" in rows[0]
        with (out / "benchmark.csv").open() as handle:
            table = list(csv.DictReader(handle))
        assert table[0]["cell"] == "tiny"

    def test_empty_suite_is_success(self, tmp_path):
        suite = tmp_path / "suite.json"
        suite.write_text(json.dumps({"cells": []}))
        out = tmp_path / "bench"
        assert main(["benchmark", "--suite", str(suite), "--seeds", "1",
                     "--out", str(out), "--no-figures"]) == 0
        assert json.loads((out / "benchmark.json").read_text()) == []

    def test_failing_cell_recorded_without_aborting(self, tmp_path):
        suite = tmp_path / "suite.json"
        suite.write_text(json.dumps({"cells": [
            {"name": "bad", **TINY, "dataset": "/nonexistent.csv", "epochs": 1},
            {"name": "good", **TINY, "epochs": 1},
        ]}))
        out = tmp_path / "bench"
        assert main(["benchmark", "--suite", str(suite), "--seeds", "1",
                     "--out", str(out), "--no-figures"]) == 0
        rows = {r["cell"]: r for r in json.loads((out / "benchmark.json").read_text())}
        assert rows["bad"]["status"] == "failed" and "error" in rows["bad"]
        assert rows["good"]["status"] == "ok"


class TestSynthCommand:
    def test_writes_loadable_csv(self, tmp_path, capsys):
        out = tmp_path / "plant.csv"
        assert main(["synth", "--out", str(out), "--samples", "120", "--seed", "3"]) == 0
        series = load_csv(out)
        assert len(series) == 120


class TestWorkflowContracts:
    def test_out_root_env_used_when_out_omitted(self, tmp_path, monkeypatch):
        monkeypatch.setenv("INTERVALNETS_OUT", str(tmp_path / "root"))
        config = write_config(tmp_path, epochs=1)
        assert main(["train", "--config", str(config)]) == 0
        produced = list((tmp_path / "root").glob("*/model.json"))
        assert len(produced) == 1

    def test_missing_out_and_env_is_config_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("INTERVALNETS_OUT", raising=False)
        config = write_config(tmp_path, epochs=1)
        assert main(["train", "--config", str(config)]) == 2

    def test_normalization_fitted_on_training_split_only(self, tmp_path):
        from intervalnets.workflows import run_training
        from intervalnets.dataio import RunConfig

        run = run_training(RunConfig.from_dict({**TINY, "epochs": 1}))
        assert run.bundle.norm.source.endswith("/train")

    def test_prediction_round_trips_normalization(self, tmp_path):
        from intervalnets.dataio import RunConfig, split_series
        from intervalnets.workflows import prediction_table, resolve_series, run_training

        config = RunConfig.from_dict({**TINY, "epochs": 2})
        run = run_training(config)
        series = resolve_series(config)
        table = prediction_table(run.bundle, series, "test")
        stats = run.bundle.norm
        segment = split_series(series, config.split).test
        pred = run.bundle.predict_normalized(stats.normalize_u(segment.u),
                                             float(stats.normalize_y(segment.y[0])),
                                             seed=config.seed)
        np.testing.assert_allclose(stats.normalize_y(table["y"]), pred.y, atol=1e-10)
