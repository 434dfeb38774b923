"""Training machinery: trajectory windowing, Adam, and the two interval
learning strategies.

The cascade strategy trains the crisp network on the regression loss, then
freezes it and fits only the margin parameters on the interval-quality
loss. The joint strategy trains both parameter sets in one pass, balancing
the two losses with gradient-norm scale adaptation: the crisp parameters
follow the scale-weighted sum of both losses, the margins follow the
interval loss alone, and the scales follow the norm-balancing objective,
renormalized to sum to one after every update.

Best parameters are snapshotted at the epoch with the lowest epoch-mean
loss (the weighted loss for the crisp side of the joint strategy, the
interval loss for margins).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .grad import Tape
from .nets import ModelSpec, UncertaintyParams, init_crisp, init_uncertainty
from .objectives import build_mse, build_rqr_w
from .rollouts import interval_param_nodes, interval_rollout, crisp_rollout, register_params, stack_steps
from .seeding import substream

__all__ = [
    "WindowedBatch",
    "window_data",
    "AdamState",
    "adam_step",
    "TrainConfig",
    "TrainRecord",
    "train_crisp",
    "train_cascade",
    "train_joint",
    "gradnorm_update",
    "shared_param_names",
    "SCALE_FLOOR",
]

SCALE_FLOOR = 1e-6


# ------------------------------------------------------------------ windows


@dataclass
class WindowedBatch:
    """Contiguous trajectory windows: row i starts at sample starts[i]."""

    u: np.ndarray  # (B, N)
    y: np.ndarray  # (B, N)
    window: int
    n_step: int
    starts: np.ndarray  # 1-based start indices

    @property
    def count(self) -> int:
        return self.u.shape[0]


def window_data(u, y, window: int, n_step: int) -> WindowedBatch:
    """Extract overlapping training trajectories of length `window`.

    Start indices run 1, 1 + n_step, ... while they stay at most K - window,
    so the number of rows is floor((K - window - 1) / n_step) + 1.
    """
    u = np.asarray(u, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if u.shape != y.shape or u.ndim != 1:
        raise DataError("input and output series must be 1-D and equally long")
    k_total = len(u)
    if window < 1 or n_step < 1:
        raise DataError("window length and stride must be positive")
    if k_total <= window:
        raise DataError(f"series of length {k_total} cannot produce windows of length {window}")
    starts = np.arange(1, k_total - window + 1, n_step)
    rows_u = np.stack([u[s - 1 : s - 1 + window] for s in starts])
    rows_y = np.stack([y[s - 1 : s - 1 + window] for s in starts])
    return WindowedBatch(rows_u, rows_y, window, n_step, starts)


# --------------------------------------------------------------------- adam


@dataclass
class AdamState:
    """Per-parameter first/second moments with bias-corrected updates."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """One Adam update; returns fresh parameter arrays."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        out[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


# ------------------------------------------------------------------- config


@dataclass
class TrainConfig:
    epochs: int = 300
    mbs: int = 32
    lam: float = 0.1  # width-penalty weight in the interval loss
    beta: float = 0.1  # gradient-norm balancing strength
    r_h: float = 1.0
    r_o: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_s: float = 0.025
    s_init: tuple[float, float] = (0.5, 0.5)
    seed: int = 0

    def make_adam(self, lr: float | None = None) -> AdamState:
        return AdamState(lr=self.lr if lr is None else lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass
class TrainRecord:
    """Per-epoch loss history, per-iteration scales, and snapshot indices."""

    epochs: list[dict] = field(default_factory=list)
    scales: list[tuple[float, float]] = field(default_factory=list)
    best_theta_epoch: int | None = None
    best_delta_epoch: int | None = None


def _minibatches(count: int, mbs: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for i in range(0, count, mbs):
        yield order[i : i + mbs]


def _check_finite(value: float, what: str, epoch: int) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what} at epoch {epoch}")
    return value


# -------------------------------------------------------------------- crisp


def train_crisp(
    batch: WindowedBatch, spec: ModelSpec, cfg: TrainConfig
) -> tuple[dict[str, np.ndarray], TrainRecord]:
    """Stage-one training of the crisp network on the regression loss."""
    theta = init_crisp(spec, cfg.seed)
    record = TrainRecord()
    adam = cfg.make_adam()
    shuffle = substream(cfg.seed, "shuffle")
    best = ({k: v.copy() for k, v in theta.items()}, math.inf)
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        total, seen = 0.0, 0
        for idx in _minibatches(batch.count, cfg.mbs, shuffle):
            u, y = batch.u[idx], batch.y[idx]
            tape = Tape()
            nodes = register_params(tape, theta, trainable=True)
            preds = crisp_rollout(tape, spec, nodes, u, y_init=y[:, 0])
            loss = build_mse(tape, stack_steps(tape, preds), y.T)
            value = _check_finite(float(loss.value), "regression loss", epoch)
            grads = tape.backward(loss)
            theta = adam_step(adam, theta, grads)
            total += value * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
        record.epochs.append(
            {"epoch": epoch, "loss_mse": epoch_loss, "seconds": time.perf_counter() - tic}
        )
        if epoch_loss < best[1]:
            best = ({k: v.copy() for k, v in theta.items()}, epoch_loss)
            record.best_theta_epoch = epoch
    return best[0], record


# ------------------------------------------------------------------ cascade


@dataclass
class CascadeResult:
    theta: dict[str, np.ndarray]
    delta: UncertaintyParams
    stage1: TrainRecord
    stage2: TrainRecord


def train_cascade(batch: WindowedBatch, spec: ModelSpec, cfg: TrainConfig) -> CascadeResult:
    """Two-stage strategy: crisp fit first, then margin fit with the crisp
    parameters frozen. Margins are initialized from the trained parameters
    at rates (r_h, r_o)."""
    theta, stage1 = train_crisp(batch, spec, cfg)
    delta = init_uncertainty(theta, cfg.r_h, cfg.r_o, spec.trick)
    record = TrainRecord()
    adam = cfg.make_adam()
    shuffle = substream(cfg.seed, "shuffle-stage2")
    best = (delta.copy(), math.inf)
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        total, seen = 0.0, 0
        for idx in _minibatches(batch.count, cfg.mbs, shuffle):
            u, y = batch.u[idx], batch.y[idx]
            tape = Tape()
            theta_nodes = register_params(tape, theta, trainable=False)
            lo_nodes = register_params(tape, delta.lower, trainable=True, prefix="dlo.")
            hi_nodes = register_params(tape, delta.upper, trainable=True, prefix="dhi.")
            ivp = interval_param_nodes(tape, theta_nodes, lo_nodes, hi_nodes, spec.trick)
            _, los, his = interval_rollout(tape, spec, theta_nodes, ivp, u, y_init=y[:, 0])
            loss = build_rqr_w(
                tape, stack_steps(tape, los), stack_steps(tape, his), y.T, spec.alpha, cfg.lam
            )
            value = _check_finite(float(loss.value), "interval loss", epoch)
            grads = tape.backward(loss)
            flat = {**{"dlo." + k: v for k, v in delta.lower.items()},
                    **{"dhi." + k: v for k, v in delta.upper.items()}}
            flat = adam_step(adam, flat, grads)
            delta = UncertaintyParams(
                {k: flat["dlo." + k] for k in delta.lower},
                {k: flat["dhi." + k] for k in delta.upper},
            )
            total += value * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
        record.epochs.append(
            {"epoch": epoch, "loss_rqr_w": epoch_loss, "seconds": time.perf_counter() - tic}
        )
        if epoch_loss < best[1]:
            best = (delta.copy(), epoch_loss)
            record.best_delta_epoch = epoch
    return CascadeResult(theta, best[0], stage1, record)


# ----------------------------------------------------------------- gradnorm


def shared_param_names(spec: ModelSpec) -> list[str]:
    """Weights of the penultimate layer, used to measure task gradients."""
    if not spec.hidden:
        return ["out.W"]
    last = len(spec.hidden) - 1
    if spec.kind == "lstm":
        return [f"l{last}.W{g}" for g in ("i", "f", "o", "c")] + [
            f"l{last}.U{g}" for g in ("i", "f", "o", "c")
        ]
    return [f"h{last}.W"]


def gradnorm_update(
    losses_now: tuple[float, float],
    losses_init: tuple[float, float],
    raw_norms: tuple[float, float],
    scales: np.ndarray,
    beta: float,
) -> tuple[np.ndarray, float]:
    """Scale gradients from the gradient-norm balancing objective.

    Each task's scaled gradient norm G_j = s_j * ||grad_j|| is pulled toward
    mean(G) * r_j**beta, where r_j is the task's relative inverse training
    rate (loss decay normalized across tasks). The targets are treated as
    constants, so dL/ds_j = sign(G_j - target_j) * ||grad_j||.

    Returns (scale gradients, balancing loss value).
    """
    if any(l0 == 0.0 for l0 in losses_init):
        raise NumericError("initial task losses must be nonzero for loss-ratio balancing")
    norms = np.asarray(raw_norms, dtype=np.float64)
    g = scales * norms
    g_bar = g.mean()
    ratios = np.asarray(losses_now) / np.asarray(losses_init)
    r = ratios / ratios.mean()
    targets = g_bar * r**beta
    l_grad = float(np.abs(g - targets).sum())
    return np.sign(g - targets) * norms, l_grad


# -------------------------------------------------------------------- joint


@dataclass
class JointResult:
    theta: dict[str, np.ndarray]
    delta: UncertaintyParams
    record: TrainRecord


def train_joint(
    batch: WindowedBatch,
    spec: ModelSpec,
    cfg: TrainConfig,
    scales_frozen: tuple[float, float] | None = None,
    update_delta: bool = True,
) -> JointResult:
    """One-stage strategy optimizing both parameter sets per mini-batch.

    `scales_frozen` pins (s1, s2) and disables their adaptation;
    `update_delta=False` freezes the margins. Both exist for ablations: with
    scales (1, 0) and frozen margins the loop reproduces crisp training.
    """
    theta = init_crisp(spec, cfg.seed)
    delta = init_uncertainty(theta, cfg.r_h, cfg.r_o, spec.trick)
    record = TrainRecord()
    adam_theta = cfg.make_adam()
    adam_delta = cfg.make_adam()
    adam_scale = cfg.make_adam(lr=cfg.lr_s)
    shuffle = substream(cfg.seed, "shuffle")
    scales = np.asarray(scales_frozen if scales_frozen is not None else cfg.s_init, dtype=np.float64)
    shared = shared_param_names(spec)
    losses_init: tuple[float, float] | None = None
    best_theta = ({k: v.copy() for k, v in theta.items()}, math.inf)
    best_delta = (delta.copy(), math.inf)
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        sums = np.zeros(4)  # mse, rqr, pareto, grad
        seen = 0
        for idx in _minibatches(batch.count, cfg.mbs, shuffle):
            u, y = batch.u[idx], batch.y[idx]
            tape = Tape()
            theta_nodes = register_params(tape, theta, trainable=True)
            lo_nodes = register_params(tape, delta.lower, trainable=True, prefix="dlo.")
            hi_nodes = register_params(tape, delta.upper, trainable=True, prefix="dhi.")
            ivp = interval_param_nodes(tape, theta_nodes, lo_nodes, hi_nodes, spec.trick)
            preds, los, his = interval_rollout(tape, spec, theta_nodes, ivp, u, y_init=y[:, 0])
            loss_mse = build_mse(tape, stack_steps(tape, preds), y.T)
            loss_rqr = build_rqr_w(
                tape, stack_steps(tape, los), stack_steps(tape, his), y.T, spec.alpha, cfg.lam
            )
            v_mse = _check_finite(float(loss_mse.value), "regression loss", epoch)
            v_rqr = _check_finite(float(loss_rqr.value), "interval loss", epoch)
            if losses_init is None:
                losses_init = (v_mse, v_rqr)
            g_mse = tape.backward(loss_mse)
            g_rqr = tape.backward(loss_rqr)
            norms = tuple(
                math.sqrt(sum(float((g[name] ** 2).sum()) for name in shared))
                for g in (g_mse, g_rqr)
            )
            scale_grads, l_grad = gradnorm_update(
                (v_mse, v_rqr), losses_init, norms, scales, cfg.beta
            )
            theta_grads = {k: scales[0] * g_mse[k] + scales[1] * g_rqr[k] for k in theta}
            theta = adam_step(adam_theta, theta, theta_grads)
            if update_delta:
                margins = {**{"dlo." + k: v for k, v in delta.lower.items()},
                           **{"dhi." + k: v for k, v in delta.upper.items()}}
                margins = adam_step(adam_delta, margins, {k: g_rqr[k] for k in margins})
                delta = UncertaintyParams(
                    {k: margins["dlo." + k] for k in delta.lower},
                    {k: margins["dhi." + k] for k in delta.upper},
                )
            if scales_frozen is None:
                scales = adam_step(adam_scale, {"s": scales}, {"s": scale_grads})["s"]
                scales = np.maximum(scales, SCALE_FLOOR)
                scales = scales / scales.sum()
            record.scales.append((float(scales[0]), float(scales[1])))
            v_pareto = scales[0] * v_mse + scales[1] * v_rqr
            sums += np.array([v_mse, v_rqr, v_pareto, l_grad]) * len(idx)
            seen += len(idx)
        means = sums / seen
        record.epochs.append(
            {
                "epoch": epoch,
                "loss_mse": float(means[0]),
                "loss_rqr_w": float(means[1]),
                "loss_pareto": float(means[2]),
                "loss_grad": float(means[3]),
                "s1": float(scales[0]),
                "s2": float(scales[1]),
                "seconds": time.perf_counter() - tic,
            }
        )
        if means[2] < best_theta[1]:
            best_theta = ({k: v.copy() for k, v in theta.items()}, means[2])
            record.best_theta_epoch = epoch
        if means[1] < best_delta[1]:
            best_delta = (delta.copy(), means[1])
            record.best_delta_epoch = epoch
    return JointResult(best_theta[0], best_delta[0], record)
