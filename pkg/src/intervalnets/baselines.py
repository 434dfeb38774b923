"""Probabilistic comparators: Gaussian-head networks trained with the
negative log-likelihood, with uncertainty from a mean-field variational
posterior, Monte Carlo dropout, or a deep ensemble.

All three construct prediction intervals from the aggregated predictive
moments via the two-sided standard-normal quantile, and all roll out
closed-loop with each sample's own mean recursion.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .grad import Tape, softplus_values
from .nets import (
    IntervalSeries,
    LstmState,
    ModelSpec,
    ff_forward,
    init_crisp,
    lstm_step,
    regression_vector,
)
from .objectives import build_nll
from .rollouts import gaussian_rollout, register_params, stack_steps
from .seeding import substream
from .training import TrainConfig, TrainRecord, WindowedBatch, adam_step, _check_finite, _minibatches

__all__ = [
    "z_quantile",
    "gaussian_pi",
    "gaussian_simulate",
    "VariationalPosterior",
    "kl_diag_gaussian",
    "bnn_train",
    "bnn_predict",
    "mcdropout_train",
    "mcdropout_predict",
    "ensemble_train",
    "ensemble_predict",
]


def z_quantile(alpha: float) -> float:
    """Two-sided standard-normal quantile for central coverage alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"coverage must lie in (0, 1), got {alpha}")
    return NormalDist().inv_cdf((1.0 + alpha) / 2.0)


def gaussian_pi(mu, sigma, alpha: float):
    """Symmetric interval mu -+ z_alpha * sigma; width is exactly 2*z*sigma."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0.0):
        raise ValueError("predictive deviation must be nonnegative")
    z = z_quantile(alpha)
    return mu - z * sigma, mu + z * sigma


def gaussian_simulate(
    spec: ModelSpec, theta: dict[str, np.ndarray], u: np.ndarray, y1: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop rollout of a two-channel network without a tape.

    Returns per-step predictive mean and variance (softplus of the raw
    channel). The mean channel feeds its own lagged regressors.
    """
    if spec.out_width != 2:
        raise ValueError("gaussian simulation needs a two-channel output head")
    u = np.asarray(u, dtype=np.float64)
    u2 = u[None, :]
    horizon = len(u)
    mu_hist: list[np.ndarray] = []
    variances = np.empty(horizon)
    means = np.empty(horizon)
    state = LstmState.zeros(spec, batch=1) if spec.kind == "lstm" else None
    mu_prev = np.array([[float(y1)]])
    for k in range(1, horizon + 1):
        x = np.concatenate(regression_vector(spec, u2, mu_hist, k, 1), axis=0)
        if spec.kind == "lstm":
            out, state = lstm_step(x, state, theta, spec)
            mu = out[0:1, :]
        else:
            out = ff_forward(x, theta, spec)
            if spec.kind == "node":
                mu = mu_prev + out[0:1, :]
                mu_prev = mu
            else:
                mu = out[0:1, :]
        mu_hist.append(mu)
        means[k - 1] = mu[0, 0]
        variances[k - 1] = softplus_values(out[1:2, :])[0, 0]
    return means, variances


def _aggregate_moments(mu_samples: np.ndarray, var_samples: np.ndarray):
    """Predictive mean and total variance over the sample axis (axis 0)."""
    mu_hat = mu_samples.mean(axis=0)
    var_hat = (var_samples + mu_samples**2).mean(axis=0) - mu_hat**2
    return mu_hat, np.maximum(var_hat, 0.0)


def _pi_series(mu_hat, var_hat, alpha) -> IntervalSeries:
    lo, hi = gaussian_pi(mu_hat, np.sqrt(var_hat), alpha)
    return IntervalSeries(np.asarray(mu_hat), lo, hi)


# ------------------------------------------------------------- NLL training


def _nll_training_loop(
    batch: WindowedBatch, spec: ModelSpec, cfg: TrainConfig, seed: int, dropout_rate: float = 0.0
) -> tuple[dict[str, np.ndarray], TrainRecord]:
    """Shared Gaussian-head trainer; optional inverted dropout on hidden
    activations (masks resampled per mini-batch forward pass)."""
    theta = init_crisp(spec, seed)
    record = TrainRecord()
    adam = cfg.make_adam()
    shuffle = substream(seed, "shuffle")
    drop_rng = substream(seed, "dropout")
    best = ({k: v.copy() for k, v in theta.items()}, math.inf)
    keep = 1.0 - dropout_rate
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        total, seen = 0.0, 0
        for idx in _minibatches(batch.count, cfg.mbs, shuffle):
            u, y = batch.u[idx], batch.y[idx]
            tape = Tape()
            nodes = register_params(tape, theta, trainable=True)
            masks = None
            if dropout_rate > 0.0:
                masks = {
                    l: tape.constant(drop_rng.binomial(1, keep, size=(n, len(idx))) / keep)
                    for l, n in enumerate(spec.hidden)
                }
            mus, variances = gaussian_rollout(tape, spec, nodes, u, y_init=y[:, 0], masks=masks)
            loss = build_nll(tape, stack_steps(tape, mus), stack_steps(tape, variances), y.T)
            value = _check_finite(float(loss.value), "likelihood loss", epoch)
            theta = adam_step(adam, theta, tape.backward(loss))
            total += value * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
        record.epochs.append(
            {"epoch": epoch, "loss_nll": epoch_loss, "seconds": time.perf_counter() - tic}
        )
        if epoch_loss < best[1]:
            best = ({k: v.copy() for k, v in theta.items()}, epoch_loss)
            record.best_theta_epoch = epoch
    return best[0], record


# ---------------------------------------------------------------------- BNN


@dataclass
class VariationalPosterior:
    """Mean-field Gaussian over every parameter; std = softplus(rho_raw)."""

    mean: dict[str, np.ndarray]
    rho_raw: dict[str, np.ndarray]

    def std(self) -> dict[str, np.ndarray]:
        return {k: softplus_values(v) for k, v in self.rho_raw.items()}

    def sample(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        std = self.std()
        return {k: m + std[k] * rng.standard_normal(m.shape) for k, m in self.mean.items()}


def kl_diag_gaussian(mean: np.ndarray, std: np.ndarray, prior_std: float) -> float:
    """Closed-form KL(N(mean, std^2) || N(0, prior_std^2)), summed elementwise."""
    if prior_std <= 0.0:
        raise ValueError("prior scale must be positive")
    return float(
        np.sum(np.log(prior_std / std) + (std**2 + mean**2) / (2.0 * prior_std**2) - 0.5)
    )


def _softplus_inverse(y: float) -> float:
    return float(np.log(np.expm1(y)))


def bnn_train(
    batch: WindowedBatch, spec: ModelSpec, cfg: TrainConfig, prior_rho: float
) -> tuple[VariationalPosterior, TrainRecord]:
    """Variational fit: single-sample reparameterized likelihood plus the
    closed-form KL to the zero-mean isotropic prior, KL weighted so it
    counts once per epoch across mini-batches."""
    if prior_rho <= 0.0:
        raise ValueError("prior scale must be positive")
    mean = init_crisp(spec, cfg.seed)
    rho0 = _softplus_inverse(0.01 * abs(prior_rho))
    rho_raw = {k: np.full_like(v, rho0) for k, v in mean.items()}
    record = TrainRecord()
    adam = cfg.make_adam()
    shuffle = substream(cfg.seed, "shuffle")
    noise = substream(cfg.seed, "sample")
    n_batches = math.ceil(batch.count / cfg.mbs)
    best = (VariationalPosterior({k: v.copy() for k, v in mean.items()},
                                 {k: v.copy() for k, v in rho_raw.items()}), math.inf)
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        total, seen = 0.0, 0
        for idx in _minibatches(batch.count, cfg.mbs, shuffle):
            u, y = batch.u[idx], batch.y[idx]
            tape = Tape()
            m_nodes = register_params(tape, mean, trainable=True, prefix="m.")
            r_nodes = register_params(tape, rho_raw, trainable=True, prefix="r.")
            theta_nodes = {}
            kl = None
            for name in mean:
                eps = tape.constant(noise.standard_normal(mean[name].shape))
                std = tape.softplus(r_nodes[name])
                theta_nodes[name] = tape.add(m_nodes[name], tape.mul(std, eps))
                term = tape.add(
                    tape.sub(tape.constant(np.log(prior_rho)), tape.log(std)),
                    tape.add(tape.square(std), tape.square(m_nodes[name]))
                    * (1.0 / (2.0 * prior_rho**2)),
                )
                piece = tape.sum(term) - 0.5 * mean[name].size
                kl = piece if kl is None else tape.add(kl, piece)
            mus, variances = gaussian_rollout(tape, spec, theta_nodes, u, y_init=y[:, 0])
            nll = build_nll(tape, stack_steps(tape, mus), stack_steps(tape, variances), y.T)
            loss = tape.add(nll, kl * (1.0 / n_batches))
            value = _check_finite(float(loss.value), "variational loss", epoch)
            grads = tape.backward(loss)
            flat = {**{"m." + k: v for k, v in mean.items()},
                    **{"r." + k: v for k, v in rho_raw.items()}}
            flat = adam_step(adam, flat, grads)
            mean = {k: flat["m." + k] for k in mean}
            rho_raw = {k: flat["r." + k] for k in rho_raw}
            total += value * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
        record.epochs.append(
            {"epoch": epoch, "loss_elbo": epoch_loss, "seconds": time.perf_counter() - tic}
        )
        if epoch_loss < best[1]:
            best = (VariationalPosterior({k: v.copy() for k, v in mean.items()},
                                         {k: v.copy() for k, v in rho_raw.items()}), epoch_loss)
            record.best_theta_epoch = epoch
    return best[0], record


def bnn_predict(
    posterior: VariationalPosterior,
    spec: ModelSpec,
    u: np.ndarray,
    y1: float,
    samples: int,
    alpha: float,
    seed: int = 0,
) -> IntervalSeries:
    """Posterior-sampled rollouts, each with its own mean recursion, then
    per-step moment aggregation and Gaussian-quantile intervals."""
    if samples < 2:
        raise ValueError("need at least two posterior samples")
    rng = substream(seed, "sample")
    mu_s = np.empty((samples, len(u)))
    var_s = np.empty((samples, len(u)))
    for s in range(samples):
        theta = posterior.sample(rng)
        mu_s[s], var_s[s] = gaussian_simulate(spec, theta, u, y1)
    return _pi_series(*_aggregate_moments(mu_s, var_s), alpha)


# --------------------------------------------------------------- MC dropout


def mcdropout_train(
    batch: WindowedBatch, spec: ModelSpec, cfg: TrainConfig, rate: float
) -> tuple[dict[str, np.ndarray], TrainRecord]:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    return _nll_training_loop(batch, spec, cfg, cfg.seed, dropout_rate=rate)


def mcdropout_predict(
    theta: dict[str, np.ndarray],
    spec: ModelSpec,
    u: np.ndarray,
    y1: float,
    rate: float,
    samples: int,
    alpha: float,
    seed: int = 0,
) -> IntervalSeries:
    """Stochastic forward passes with dropout kept active, batched as
    columns (one mask set per pass, fixed along the rollout)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if samples < 2:
        raise ValueError("need at least two stochastic passes")
    rng = substream(seed, "dropout")
    keep = 1.0 - rate
    tape = Tape()
    nodes = register_params(tape, theta, trainable=False)
    masks = None
    if rate > 0.0:
        masks = {
            l: tape.constant(rng.binomial(1, keep, size=(n, samples)) / keep)
            for l, n in enumerate(spec.hidden)
        }
    u_tiled = np.tile(np.asarray(u, dtype=np.float64), (samples, 1))
    y_init = np.full(samples, float(y1))
    mus, variances = gaussian_rollout(tape, spec, nodes, u_tiled, y_init=y_init, masks=masks)
    mu_s = np.concatenate([m.value for m in mus], axis=0).T  # (samples, horizon)
    var_s = np.concatenate([v.value for v in variances], axis=0).T
    return _pi_series(*_aggregate_moments(mu_s, var_s), alpha)


# ------------------------------------------------------------ deep ensemble


def ensemble_train(
    batch: WindowedBatch, spec: ModelSpec, cfg: TrainConfig, members: int
) -> tuple[list[dict[str, np.ndarray]], list[TrainRecord]]:
    """Independently seeded members sharing the architecture and data."""
    if members < 2:
        raise ValueError("an ensemble needs at least two members")
    thetas, records = [], []
    for i in range(members):
        member_seed = int(substream(cfg.seed, f"ensemble-member-{i}").integers(2**31))
        theta, record = _nll_training_loop(batch, spec, cfg, member_seed)
        thetas.append(theta)
        records.append(record)
    return thetas, records


def ensemble_predict(
    thetas: list[dict[str, np.ndarray]],
    spec: ModelSpec,
    u: np.ndarray,
    y1: float,
    alpha: float,
) -> IntervalSeries:
    """Member rollouts aggregated by the law of total variance (population
    variance over members)."""
    if len(thetas) < 2:
        raise ValueError("an ensemble needs at least two members")
    mu_s = np.empty((len(thetas), len(u)))
    var_s = np.empty((len(thetas), len(u)))
    for i, theta in enumerate(thetas):
        mu_s[i], var_s[i] = gaussian_simulate(spec, theta, u, y1)
    return _pi_series(*_aggregate_moments(mu_s, var_s), alpha)
