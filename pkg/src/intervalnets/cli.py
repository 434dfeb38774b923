"""Command-line entry point.

Subcommands: train, eval, predict, analyze, benchmark, synth. Machine
output is always JSON/CSV; report paths additionally render figures unless
--no-figures is given. Exit codes: 0 success, 2 usage/config, 3 data,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import elasticity, export_heatmap
from .dataio import RunConfig, load_config, load_csv, synthetic_plant
from .errors import ConfigError, DataError, NumericError
from .model_io import load_model, save_model
from .nets import materialize
from .workflows import (
    evaluate_bundle,
    prediction_table,
    run_benchmark,
    run_training,
    write_manifest,
)

OUT_ROOT_ENV = "INTERVALNETS_OUT"


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ROOT_ENV)
    if not root:
        raise ConfigError(f"--out not given and {OUT_ROOT_ENV} is unset")
    return Path(root) / default_name


def _alpha_flag(value: str) -> float:
    alpha = float(value)
    if not 0.0 < alpha < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intervalnets",
        description="Interval neural networks for uncertainty-aware system identification",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True, help="run configuration JSON")
    p_train.add_argument("--strategy", choices=("cascade", "joint", "bnn", "mcdropout", "ensemble"))
    p_train.add_argument("--model", choices=("ilstm", "inode", "lstm", "node"))
    p_train.add_argument("--trick", choices=("abs", "relu"))
    p_train.add_argument("--alpha", type=_alpha_flag)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--out", help="output directory (defaults under $%s)" % OUT_ROOT_ENV)

    p_eval = sub.add_parser("eval", help="evaluate a trained model on a split")
    p_eval.add_argument("--model", required=True, help="model JSON path")
    p_eval.add_argument("--data", help="dataset CSV (defaults to the training dataset)")
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")

    p_pred = sub.add_parser("predict", help="write per-step predictions as CSV")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data")
    p_pred.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_pred.add_argument("--out", required=True, help="output CSV path")
    p_pred.add_argument("--no-figures", action="store_true")

    p_ana = sub.add_parser("analyze", help="export parameter-uncertainty elasticity")
    p_ana.add_argument("--model", required=True)
    p_ana.add_argument("--out", help="output directory")
    p_ana.add_argument("--no-figures", action="store_true")

    p_bench = sub.add_parser("benchmark", help="run a suite of training cells")
    p_bench.add_argument("--suite", required=True, help="suite JSON listing cells")
    p_bench.add_argument("--seeds", type=int, default=3)
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.add_argument("--out", help="output directory")
    p_bench.add_argument("--no-figures", action="store_true")

    p_synth = sub.add_parser("synth", help="write the bundled synthetic dataset as CSV")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--samples", type=int, default=1500)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--noise-std", type=float, default=0.05)
    return parser


def _load_series_for(bundle, data_arg):
    if data_arg:
        return load_csv(data_arg)
    config = bundle.training.get("config", {})
    dataset = config.get("dataset")
    if dataset == "synthetic":
        return synthetic_plant(config["synth_k"], config["synth_seed"], config["synth_noise"])
    if dataset:
        return load_csv(dataset)
    raise DataError("no --data given and the model records no dataset")


def cmd_train(args) -> int:
    config = load_config(args.config)
    overrides = {}
    for key in ("strategy", "model", "trick", "alpha", "seed"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if overrides:
        config = RunConfig.from_dict({**config.to_dict(), **overrides})
    out_dir = _out_dir(args, f"{config.strategy}-{config.model}-seed{config.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)
    run = run_training(config)
    save_model(out_dir / "model.json", run.bundle)
    with (out_dir / "epochs.jsonl").open("w") as handle:
        for entry in run.epoch_log:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")
    write_manifest(out_dir, config, ["model.json", "epochs.jsonl"])
    print(json.dumps({"out": str(out_dir), "seconds": run.seconds}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    bundle = load_model(args.model)
    series = _load_series_for(bundle, args.data)
    report = evaluate_bundle(bundle, series, args.split)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    bundle = load_model(args.model)
    series = _load_series_for(bundle, args.data)
    table = prediction_table(bundle, series, args.split)
    out_path = Path(args.out)
    if out_path.parent:
        out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "u", "y_true", "y", "y_lo", "y_hi"])
        for i in range(len(table["k"])):
            writer.writerow(
                [int(table["k"][i])]
                + [repr(float(table[col][i])) for col in ("u", "y_true", "y", "y_lo", "y_hi")]
            )
    if not args.no_figures:
        from .figures import prediction_figure

        prediction_figure(table, out_path.with_suffix(".png"), title=f"{args.split} split")
    print(json.dumps({"rows": len(table["k"]), "out": str(out_path)}, sort_keys=True))
    return 0


def cmd_analyze(args) -> int:
    bundle = load_model(args.model)
    if bundle.kind != "interval" or bundle.delta is None:
        raise DataError("model has no uncertainty parameters; train with cascade or joint")
    out_dir = _out_dir(args, "analysis")
    iv_params = materialize(bundle.theta, bundle.delta, bundle.spec.trick)
    report = elasticity(
        iv_params,
        bundle.theta,
        metadata={
            "strategy": bundle.training.get("strategy"),
            "seed": bundle.training.get("seed"),
            "alpha": bundle.spec.alpha,
            "model": str(args.model),
        },
    )
    index = export_heatmap(report, out_dir, bundle.spec)
    if not args.no_figures:
        from .figures import channelwise_figure, heatmap_figure

        for entry in index["files"]:
            heat = np.genfromtxt(out_dir / entry["heatmap"], delimiter=",", skip_header=1)
            heatmap_figure(
                heat, entry["columns"], out_dir / (Path(entry["heatmap"]).stem + ".png"),
                title=entry["tensor"],
            )
            chan = np.genfromtxt(out_dir / entry["channelwise"], delimiter=",", skip_header=1)
            channelwise_figure(
                np.atleast_1d(chan), entry["columns"],
                out_dir / (Path(entry["channelwise"]).stem + ".png"), title=entry["tensor"],
            )
    print(json.dumps({"out": str(out_dir), "tensors": len(index["files"])}, sort_keys=True))
    return 0


def cmd_benchmark(args) -> int:
    out_dir = _out_dir(args, "benchmark")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_benchmark(args.suite, args.seeds, out_dir, jobs=args.jobs)
    (out_dir / "benchmark.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    columns = ["cell", "status", "rmse_x100_mean", "rmse_x100_std", "picp_mean", "picp_std",
               "pinaw_x100_mean", "pinaw_x100_std", "cwc_mean", "cwc_std", "error"]
    with (out_dir / "benchmark.csv").open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    if not args.no_figures and any(r.get("status") == "ok" for r in rows):
        from .figures import benchmark_figure

        benchmark_figure(rows, out_dir / "benchmark.png")
    print(json.dumps({"out": str(out_dir), "cells": len(rows)}, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    series = synthetic_plant(args.samples, args.seed, args.noise_std)
    out_path = Path(args.out)
    if out_path.parent:
        out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["u", "y"])
        for u, y in zip(series.u, series.y):
            writer.writerow([repr(float(u)), repr(float(y))])
    print(json.dumps({"rows": len(series), "out": str(out_path)}, sort_keys=True))
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "analyze": cmd_analyze,
    "benchmark": cmd_benchmark,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
