"""End-to-end run orchestration shared by the CLI and the test suite:
config -> data -> training -> bundle, plus evaluation, prediction tables,
and the benchmark grid.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import bnn_train, ensemble_train, mcdropout_train
from .dataio import (
    NormalizationStats,
    RawSeries,
    RunConfig,
    SplitSeries,
    load_csv,
    split_series,
    synthetic_plant,
    zscore_apply,
    zscore_fit,
)
from .errors import ConfigError, DataError
from .model_io import ModelBundle, save_model
from .nets import ModelSpec
from .objectives import MetricReport, evaluate_intervals
from .training import TrainConfig, train_cascade, train_joint, window_data

__all__ = [
    "model_spec_from_config",
    "train_config_from_config",
    "resolve_series",
    "prepare_splits",
    "TrainedRun",
    "run_training",
    "evaluate_bundle",
    "prediction_table",
    "run_benchmark",
    "write_manifest",
]


def model_spec_from_config(config: RunConfig) -> ModelSpec:
    return ModelSpec(
        kind=config.base_kind,
        hidden=config.hidden,
        n_x=config.n_x,
        n_d=config.n_d,
        n_y=config.n_y,
        activation=config.activation,
        trick=config.trick,
        alpha=config.alpha,
        out_width=1 if config.strategy in ("cascade", "joint") else 2,
    )


def train_config_from_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=config.epochs,
        mbs=config.mbs,
        lam=config.lam,
        beta=config.beta,
        r_h=config.r_h,
        r_o=config.r_o,
        lr=config.lr,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
        lr_s=config.lr_s,
        seed=config.seed,
    )


def resolve_series(config: RunConfig) -> RawSeries:
    if config.dataset == "synthetic":
        return synthetic_plant(config.synth_k, config.synth_seed, config.synth_noise)
    return load_csv(config.dataset)


def prepare_splits(config: RunConfig, series: RawSeries) -> tuple[SplitSeries, NormalizationStats, SplitSeries]:
    """Chronological splits plus normalization fitted on the training split.

    Returns (raw splits, stats, normalized splits).
    """
    splits = split_series(series, config.split)
    stats = zscore_fit(splits.train)
    normalized = SplitSeries(
        zscore_apply(splits.train, stats),
        zscore_apply(splits.val, stats) if len(splits.val) else splits.val,
        zscore_apply(splits.test, stats) if len(splits.test) else splits.test,
    )
    return splits, stats, normalized


@dataclass
class TrainedRun:
    bundle: ModelBundle
    epoch_log: list[dict]
    seconds: float


def run_training(config: RunConfig) -> TrainedRun:
    """Train the configured model end to end on normalized training data."""
    series = resolve_series(config)
    _, stats, normalized = prepare_splits(config, series)
    batch = window_data(normalized.train.u, normalized.train.y, config.window, config.n_step)
    spec = model_spec_from_config(config)
    tcfg = train_config_from_config(config)
    tic = time.perf_counter()
    epoch_log: list[dict] = []
    training_meta = {
        "strategy": config.strategy,
        "seed": config.seed,
        "alpha": config.alpha,
        "lam": config.lam,
        "beta": config.beta,
        "config": config.to_dict(),
    }
    bundle = ModelBundle(kind="interval", spec=spec, norm=stats, training=training_meta)
    if config.strategy == "cascade":
        result = train_cascade(batch, spec, tcfg)
        bundle.theta, bundle.delta = result.theta, result.delta
        epoch_log += [{"stage": 1, **e} for e in result.stage1.epochs]
        epoch_log += [{"stage": 2, **e} for e in result.stage2.epochs]
        training_meta["best_epochs"] = {
            "theta": result.stage1.best_theta_epoch,
            "delta": result.stage2.best_delta_epoch,
        }
    elif config.strategy == "joint":
        result = train_joint(batch, spec, tcfg)
        bundle.theta, bundle.delta = result.theta, result.delta
        epoch_log += result.record.epochs
        training_meta["best_epochs"] = {
            "theta": result.record.best_theta_epoch,
            "delta": result.record.best_delta_epoch,
        }
    elif config.strategy == "bnn":
        posterior, record = bnn_train(batch, spec, tcfg, config.rho)
        bundle.kind, bundle.posterior = "bnn", posterior
        bundle.baseline = {"rho": config.rho, "samples": config.samples}
        epoch_log += record.epochs
    elif config.strategy == "mcdropout":
        theta, record = mcdropout_train(batch, spec, tcfg, config.dropout)
        bundle.kind, bundle.theta = "mcdropout", theta
        bundle.baseline = {"dropout": config.dropout, "samples": config.samples}
        epoch_log += record.epochs
    elif config.strategy == "ensemble":
        members, records = ensemble_train(batch, spec, tcfg, config.members)
        bundle.kind, bundle.members = "ensemble", members
        bundle.baseline = {"members": config.members}
        epoch_log += [{"member": i, **e} for i, r in enumerate(records) for e in r.epochs]
    else:
        raise ConfigError(f"unknown strategy {config.strategy!r}")
    return TrainedRun(bundle, epoch_log, time.perf_counter() - tic)


def _split_segment(bundle: ModelBundle, series: RawSeries, split: str) -> RawSeries:
    config = bundle.training.get("config")
    if not config:
        raise DataError("model carries no training config; cannot reconstruct splits")
    return split_series(series, config["split"]).segment(split)


def evaluate_bundle(bundle: ModelBundle, series: RawSeries, split: str = "test") -> MetricReport:
    """Metrics on one chronological split, in normalized units."""
    segment = _split_segment(bundle, series, split)
    if len(segment) < 2:
        raise DataError(f"split {split!r} is too short to evaluate")
    normalized = zscore_apply(segment, bundle.norm)
    pred = bundle.predict_normalized(
        normalized.u, float(normalized.y[0]), seed=bundle.training.get("seed", 0)
    )
    return evaluate_intervals(normalized.y, pred.y, pred.lo, pred.hi, bundle.spec.alpha)


def prediction_table(bundle: ModelBundle, series: RawSeries, split: str = "test") -> dict:
    """Per-step predictions in original units, plus the split offset."""
    segment = _split_segment(bundle, series, split)
    splits = split_series(series, bundle.training["config"]["split"])
    offsets = {
        "train": 0,
        "val": len(splits.train),
        "test": len(splits.train) + len(splits.val),
    }
    normalized = zscore_apply(segment, bundle.norm)
    pred = bundle.predict_normalized(
        normalized.u, float(normalized.y[0]), seed=bundle.training.get("seed", 0)
    )
    return {
        "k": np.arange(1, len(segment) + 1) + offsets[split],
        "u": segment.u,
        "y_true": segment.y,
        "y": bundle.norm.denormalize_y(pred.y),
        "y_lo": bundle.norm.denormalize_y(pred.lo),
        "y_hi": bundle.norm.denormalize_y(pred.hi),
    }


def write_manifest(out_dir: Path, config: RunConfig, outputs: list[str]) -> Path:
    resolved = config.to_dict()
    hasher = hashlib.sha256(json.dumps(resolved, sort_keys=True).encode())
    if config.dataset != "synthetic":
        try:
            hasher.update(Path(config.dataset).read_bytes())
        except OSError as exc:
            raise DataError(f"cannot hash dataset {config.dataset}: {exc}") from exc
    manifest = {
        "config": resolved,
        "seed": config.seed,
        "inputs_sha256": hasher.hexdigest(),
        "outputs": outputs,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "package_version": __version__,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


# ----------------------------------------------------------------- benchmark


def _run_cell(cell: dict, seeds: list[int], out_dir: str | None) -> dict:
    """Train and evaluate one suite cell across seeds; never raises."""
    name = cell.get("name") or f"cell{cell.get('index', '')}"
    try:
        base = dict(cell)
        base.pop("name", None)
        base.pop("index", None)
        reports = []
        for seed in seeds:
            config = RunConfig.from_dict({**base, "seed": seed})
            run = run_training(config)
            series = resolve_series(config)
            report = evaluate_bundle(run.bundle, series, "test")
            reports.append(report.to_dict())
            if out_dir is not None:
                seed_dir = Path(out_dir) / name / f"seed{seed}"
                seed_dir.mkdir(parents=True, exist_ok=True)
                save_model(seed_dir / "model.json", run.bundle)
                (seed_dir / "metrics.json").write_text(
                    json.dumps(report.to_dict(), indent=2, sort_keys=True)
                )
        summary: dict = {"cell": name, "status": "ok", "seeds": list(seeds)}
        for key in ("rmse_x100", "picp", "pinaw_x100", "cwc"):
            values = np.array([r[key] for r in reports])
            summary[f"{key}_mean"] = float(values.mean())
            summary[f"{key}_std"] = float(values.std())
        return summary
    except Exception as exc:  # cell isolation: record and continue
        return {"cell": name, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def run_benchmark(suite_path, seeds: int, out_dir, jobs: int = 1) -> list[dict]:
    """Run every suite cell over the seed range, aggregating test metrics."""
    suite_path = Path(suite_path)
    try:
        suite = json.loads(suite_path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read suite {suite_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{suite_path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    cells = suite.get("cells", [])
    if not isinstance(cells, list):
        raise ConfigError("suite 'cells' must be a list")
    for i, cell in enumerate(cells):
        cell.setdefault("index", i)
    seed_list = list(range(seeds))
    cell_dir = str(Path(out_dir) / "cells") if out_dir else None
    if jobs > 1 and len(cells) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, cells, [seed_list] * len(cells), [cell_dir] * len(cells)))
    else:
        rows = [_run_cell(cell, seed_list, cell_dir) for cell in cells]
    return rows
