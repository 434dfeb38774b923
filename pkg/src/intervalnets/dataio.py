"""Dataset ingestion, chronological splitting, z-score normalization, and
run-configuration parsing.

Splits are contiguous in time (never shuffled) and normalization statistics
are fitted on the training segment only; every downstream artifact carries
the statistics it was produced with. A bundled first-order synthetic plant
keeps the test suite self-contained.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .seeding import substream

__all__ = [
    "RawSeries",
    "NormalizationStats",
    "SplitSeries",
    "load_csv",
    "split_series",
    "zscore_fit",
    "zscore_apply",
    "zscore_invert",
    "synthetic_plant",
    "RunConfig",
    "load_config",
]


@dataclass
class RawSeries:
    """One input/output record per sample, equal lengths, finite values."""

    u: np.ndarray
    y: np.ndarray
    name: str = "series"

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.u.shape != self.y.shape or self.u.ndim != 1:
            raise DataError("u and y must be 1-D arrays of equal length")
        if not (np.isfinite(self.u).all() and np.isfinite(self.y).all()):
            raise DataError(f"series {self.name!r} contains non-finite values")

    def __len__(self) -> int:
        return len(self.u)


def load_csv(path) -> RawSeries:
    """Read a two-column (u, y) CSV; a single non-numeric header row is
    skipped, anything else malformed raises with its row number."""
    path = Path(path)
    u, y = [], []
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with handle:
        for row_no, row in enumerate(csv.reader(handle), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{row_no}: expected at least 2 columns, got {len(row)}")
            try:
                vals = (float(row[0]), float(row[1]))
            except ValueError:
                if row_no == 1:
                    continue  # header
                raise DataError(f"{path}:{row_no}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{row_no}: non-finite value")
            u.append(vals[0])
            y.append(vals[1])
    if not u:
        raise DataError(f"{path}: no data rows")
    return RawSeries(np.array(u), np.array(y), name=path.stem)


@dataclass
class SplitSeries:
    train: RawSeries
    val: RawSeries
    test: RawSeries

    def segment(self, name: str) -> RawSeries:
        try:
            return getattr(self, name)
        except AttributeError:
            raise DataError(f"unknown split {name!r}; use train, val, or test") from None


def split_series(series: RawSeries, fractions) -> SplitSeries:
    """Chronological split by percentages summing to 100.

    Train and validation lengths round half-up; the remainder is the test
    segment.
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) != 3:
        raise ConfigError("split needs exactly three percentages")
    if any(f < 0 for f in fractions):
        raise ConfigError("split percentages must be nonnegative")
    if abs(sum(fractions) - 100.0) > 1e-9:
        raise ConfigError(f"split percentages must sum to 100, got {sum(fractions)}")
    k = len(series)
    n_train = int(math.floor(k * fractions[0] / 100.0 + 0.5))
    n_val = int(math.floor(k * fractions[1] / 100.0 + 0.5))
    if n_train + n_val > k:
        raise ConfigError("split leaves no room for the test segment")
    bounds = (n_train, n_train + n_val)
    return SplitSeries(
        RawSeries(series.u[: bounds[0]], series.y[: bounds[0]], f"{series.name}/train"),
        RawSeries(series.u[bounds[0] : bounds[1]], series.y[bounds[0] : bounds[1]], f"{series.name}/val"),
        RawSeries(series.u[bounds[1] :], series.y[bounds[1] :], f"{series.name}/test"),
    )


@dataclass
class NormalizationStats:
    """Training-split moments; `source` records what they were fitted on."""

    mean_u: float
    std_u: float
    mean_y: float
    std_y: float
    source: str = "train"

    def normalize_u(self, a):
        return (np.asarray(a, dtype=np.float64) - self.mean_u) / self.std_u

    def normalize_y(self, a):
        return (np.asarray(a, dtype=np.float64) - self.mean_y) / self.std_y

    def denormalize_u(self, a):
        return np.asarray(a, dtype=np.float64) * self.std_u + self.mean_u

    def denormalize_y(self, a):
        return np.asarray(a, dtype=np.float64) * self.std_y + self.mean_y

    def to_dict(self) -> dict:
        return {
            "mean_u": self.mean_u,
            "std_u": self.std_u,
            "mean_y": self.mean_y,
            "std_y": self.std_y,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(d["mean_u"], d["std_u"], d["mean_y"], d["std_y"], d.get("source", "train"))


def zscore_fit(series: RawSeries) -> NormalizationStats:
    std_u = float(np.std(series.u))
    std_y = float(np.std(series.y))
    if std_u <= 0.0 or std_y <= 0.0:
        raise DataError(f"constant channel in {series.name!r}; z-score undefined")
    return NormalizationStats(
        float(np.mean(series.u)), std_u, float(np.mean(series.y)), std_y, source=series.name
    )


def zscore_apply(series: RawSeries, stats: NormalizationStats) -> RawSeries:
    return RawSeries(stats.normalize_u(series.u), stats.normalize_y(series.y), series.name)


def zscore_invert(series: RawSeries, stats: NormalizationStats) -> RawSeries:
    return RawSeries(stats.denormalize_u(series.u), stats.denormalize_y(series.y), series.name)


def synthetic_plant(
    k_total: int = 1500,
    seed: int = 0,
    noise_std: float = 0.05,
    pole: float = 0.9,
    gain: float = 0.1,
) -> RawSeries:
    """First-order linear plant y(k) = pole*y(k-1) + gain*u(k-1) + noise.

    The recursion runs on the clean state and the noise is additive on the
    observed output, so a perfect simulator's residual is the i.i.d. noise
    itself. The excitation is piecewise constant with random levels of
    magnitude in [0.4, 1] and random hold lengths, long enough for the
    output to settle so the signal variance dominates the noise.
    """
    rng = substream(seed, "data")
    u = np.empty(k_total)
    i = 0
    while i < k_total:
        hold = int(rng.integers(20, 41))
        level = rng.uniform(0.4, 1.0) * (1.0 if rng.uniform() < 0.5 else -1.0)
        u[i : i + hold] = level
        i += hold
    clean = np.empty(k_total)
    prev = 0.0
    for k in range(k_total):
        prev = pole * prev + gain * (u[k - 1] if k >= 1 else 0.0)
        clean[k] = prev
    y = clean + rng.normal(0.0, noise_std, size=k_total)
    return RawSeries(u, y, name="synthetic")


# ------------------------------------------------------------------- config

_MODEL_KINDS = ("ilstm", "inode", "lstm", "node")
_STRATEGIES = ("cascade", "joint", "bnn", "mcdropout", "ensemble")


@dataclass
class RunConfig:
    """Complete run description; mirrors the JSON config document."""

    dataset: str = "synthetic"
    split: tuple[float, float, float] = (40.0, 10.0, 50.0)
    window: int = 30
    n_step: int = 2
    n_x: int = 2
    n_d: int = 0
    n_y: int = 1
    model: str = "inode"
    hidden: tuple[int, ...] = (16, 16)
    activation: str = "tanh"
    trick: str = "abs"
    strategy: str = "cascade"
    alpha: float = 0.9
    lam: float = 0.1
    beta: float = 0.1
    r_h: float = 1.0
    r_o: float = 1.0
    seed: int = 0
    epochs: int = 300
    mbs: int = 32
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_s: float = 0.025
    rho: float = 1.0  # prior scale for the variational baseline
    dropout: float = 0.05
    members: int = 5
    samples: int = 100
    synth_k: int = 1500
    synth_seed: int = 0
    synth_noise: float = 0.05

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.model not in _MODEL_KINDS:
            raise ConfigError(f"model must be one of {_MODEL_KINDS}, got {self.model!r}")
        if self.strategy not in _STRATEGIES:
            raise ConfigError(f"strategy must be one of {_STRATEGIES}, got {self.strategy!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.lam < 0.0:
            raise ConfigError("lam must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)")
        if self.members < 2:
            raise ConfigError("ensemble needs at least 2 members")
        if self.samples < 2:
            raise ConfigError("posterior sampling needs at least 2 samples")
        if self.epochs < 0 or self.mbs < 1:
            raise ConfigError("epochs must be >= 0 and mbs >= 1")
        for tag, r in (("r_h", self.r_h), ("r_o", self.r_o)):
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"{tag} must lie in [0, 1], got {r}")
        if self.strategy in ("cascade", "joint") and self.model not in ("ilstm", "inode"):
            raise ConfigError(f"strategy {self.strategy!r} requires an interval model (ilstm/inode)")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @property
    def base_kind(self) -> str:
        return "lstm" if self.model in ("ilstm", "lstm") else "node"


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(raw)
