"""Loss functions and prediction-interval quality metrics.

Plain-array implementations are used for reporting and as test oracles;
the build_* variants record the same computations on a gradient tape for
training. Coverage metrics treat interval endpoints as covered (closed
intervals). PICP is a percentage for reporting but is compared against the
target coverage on the fraction scale inside the width criterion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grad import Node, Tape

__all__ = [
    "MetricReport",
    "mse_loss",
    "rmse",
    "rqr_w_loss",
    "nll_loss",
    "picp",
    "pinaw",
    "cwc",
    "evaluate_intervals",
    "build_mse",
    "build_rqr_w",
    "build_nll",
]

CWC_PENALTY = 25.0


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(pred, target)
    return float(np.mean((pred - target) ** 2))


def rmse(pred, target) -> float:
    return float(np.sqrt(mse_loss(pred, target)))


def rqr_w_loss(target, lo, hi, alpha: float, lam: float) -> float:
    """Relaxed quantile-regression loss plus a squared-width penalty.

    Per element, kappa = (target - lo) * (target - hi) is nonnegative
    outside the interval and negative inside; the branch weights are alpha
    and alpha - 1 so both branches vanish on the boundary.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if lam < 0.0:
        raise ValueError(f"width weight must be nonnegative, got {lam}")
    target = np.asarray(target, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    _check_same_shape(target, lo)
    _check_same_shape(target, hi)
    if np.any(lo > hi):
        raise ValueError("interval bounds violate lo <= hi")
    kappa = (target - lo) * (target - hi)
    rqr = np.where(kappa >= 0.0, alpha * kappa, (alpha - 1.0) * kappa)
    width_pen = lam * (hi - lo) ** 2 / 2.0
    return float(np.mean(rqr + width_pen))


def nll_loss(target, mu, var) -> float:
    """Gaussian negative log-likelihood up to the constant log(2*pi)/2."""
    target = np.asarray(target, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    _check_same_shape(target, mu)
    _check_same_shape(target, var)
    if np.any(var <= 0.0):
        raise ValueError("variance must be strictly positive")
    return float(np.mean(0.5 * np.log(var) + (target - mu) ** 2 / (2.0 * var)))


def picp(target, lo, hi) -> float:
    """Percentage of targets inside their intervals, endpoints inclusive."""
    target = np.asarray(target, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    _check_same_shape(target, lo)
    _check_same_shape(target, hi)
    if target.size == 0:
        raise ValueError("coverage of an empty sample is undefined")
    inside = (target >= lo) & (target <= hi)
    return float(100.0 * np.mean(inside))


def pinaw(target, lo, hi) -> float:
    """Mean interval width normalized by the observed target range."""
    target = np.asarray(target, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    _check_same_shape(target, lo)
    _check_same_shape(target, hi)
    span = float(target.max() - target.min())
    if span <= 0.0:
        raise ValueError("target range is zero; normalized width undefined")
    return float(np.mean(hi - lo) / span)


def cwc(picp_percent: float, pinaw_value: float, alpha: float, eta: float = CWC_PENALTY) -> float:
    """Coverage-width criterion: width inflated exponentially under-coverage.

    The coverage enters on the fraction scale so the exponent matches the
    intended magnitude of the penalty.
    """
    coverage = picp_percent / 100.0
    penalty = np.exp(-eta * (coverage - alpha)) if coverage < alpha else 0.0
    return float(pinaw_value * (1.0 + penalty))


@dataclass
class MetricReport:
    """Point and interval metrics for one evaluation, normalized units."""

    rmse: float
    picp: float
    pinaw: float
    cwc: float
    alpha: float
    eta: float = CWC_PENALTY

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "rmse_x100": 100.0 * self.rmse,
            "picp": self.picp,
            "pinaw": self.pinaw,
            "pinaw_x100": 100.0 * self.pinaw,
            "cwc": self.cwc,
            "alpha": self.alpha,
            "eta": self.eta,
            "scaled_by_100": True,
        }


def evaluate_intervals(target, y, lo, hi, alpha: float) -> MetricReport:
    p = picp(target, lo, hi)
    w = pinaw(target, lo, hi)
    return MetricReport(rmse=rmse(y, target), picp=p, pinaw=w, cwc=cwc(p, w, alpha), alpha=alpha)


# -------------------------------------------------------------- tape builders


def build_mse(tape: Tape, pred: Node, target: np.ndarray) -> Node:
    diff = tape.sub(pred, tape.constant(target))
    return tape.mean(tape.square(diff))


def build_rqr_w(
    tape: Tape, lo: Node, hi: Node, target: np.ndarray, alpha: float, lam: float
) -> Node:
    t = tape.constant(target)
    kappa = tape.mul(tape.sub(t, lo), tape.sub(t, hi))
    rqr = tape.select_branch(kappa, kappa * alpha, kappa * (alpha - 1.0))
    width_pen = tape.square(tape.sub(hi, lo)) * (lam / 2.0)
    return tape.mean(tape.add(rqr, width_pen))


def build_nll(tape: Tape, mu: Node, var: Node, target: np.ndarray) -> Node:
    t = tape.constant(target)
    res = tape.square(tape.sub(t, mu))
    return tape.mean(tape.add(tape.log(var) * 0.5, tape.div(res, var * 2.0)))
