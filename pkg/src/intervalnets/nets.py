"""Model definitions: crisp feedforward / LSTM / NODE networks and their
interval counterparts with margin parameters.

Parameters live in flat dicts keyed by dotted names ("h0.W", "l1.Uf",
"out.b"); biases are column vectors so they broadcast over a batch axis.
The interval side derives per-parameter bounds [theta - lo_margin,
theta + hi_margin] where the margins are positivity-mapped (abs or relu)
from unconstrained raw tensors, guaranteeing the crisp parameter is always
enclosed.

Recurrent interval models re-center every step: the interval network's
recurrent inputs (hidden/cell state, previous output) are reset to
degenerate intervals around the crisp network's values, so interval widths
reflect the current step's parameter uncertainty and never compound over
time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grad import sigmoid_values
from .intervals import IntervalMatrix, iv_apply_monotone, iv_hadamard, iv_matmul
from .seeding import substream

__all__ = [
    "GATES",
    "ModelSpec",
    "UncertaintyParams",
    "IntervalSeries",
    "LstmState",
    "param_shapes",
    "is_output_param",
    "init_crisp",
    "init_uncertainty",
    "apply_trick",
    "materialize",
    "ff_forward",
    "lstm_step",
    "node_step",
    "inn_forward",
    "ilstm_step",
    "inode_step",
    "simulate",
]

GATES = ("i", "f", "o", "c")

_ACTIVATIONS = {"tanh": np.tanh, "sigmoid": sigmoid_values}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: kind, sizes, lag structure, margin trick."""

    kind: str  # "feedforward" | "lstm" | "node"
    hidden: tuple[int, ...]
    n_x: int
    n_d: int
    n_y: int
    activation: str = "tanh"
    trick: str = "abs"
    alpha: float = 0.9
    out_width: int = 1  # 2 for Gaussian-head baselines (mean + raw variance)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in ("feedforward", "lstm", "node"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        if self.kind == "lstm" and not self.hidden:
            raise ValueError("an LSTM needs at least one recurrent layer")
        if self.activation not in _ACTIVATIONS:
            # Interval propagation evaluates activations at the interval
            # endpoints, which is only valid for monotone functions.
            raise ValueError(f"unsupported activation {self.activation!r}; use tanh or sigmoid")
        if self.trick not in ("abs", "relu"):
            raise ValueError(f"unknown margin trick {self.trick!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"coverage alpha must lie in (0, 1), got {self.alpha}")
        if min(self.n_x, self.n_d, self.n_y) < 0:
            raise ValueError("lag counts must be nonnegative")
        if self.out_width not in (1, 2):
            raise ValueError("out_width must be 1 or 2")

    @property
    def input_width(self) -> int:
        return (self.n_x + 1) + self.n_y

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_width, *self.hidden, self.out_width]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "hidden": list(self.hidden),
            "n_x": self.n_x,
            "n_d": self.n_d,
            "n_y": self.n_y,
            "activation": self.activation,
            "trick": self.trick,
            "alpha": self.alpha,
            "out_width": self.out_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            kind=d["kind"],
            hidden=tuple(d["hidden"]),
            n_x=d["n_x"],
            n_d=d["n_d"],
            n_y=d["n_y"],
            activation=d.get("activation", "tanh"),
            trick=d.get("trick", "abs"),
            alpha=d.get("alpha", 0.9),
            out_width=d.get("out_width", 1),
        )


@dataclass
class UncertaintyParams:
    """Raw (pre-trick) margin tensors, one lower/upper pair per crisp tensor."""

    lower: dict[str, np.ndarray]
    upper: dict[str, np.ndarray]

    def copy(self) -> "UncertaintyParams":
        return UncertaintyParams(
            {k: v.copy() for k, v in self.lower.items()},
            {k: v.copy() for k, v in self.upper.items()},
        )


@dataclass
class IntervalSeries:
    """Per-step point prediction with its enclosing interval."""

    y: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class LstmState:
    """Per-layer hidden and cell state columns, shape (units, batch)."""

    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, spec: ModelSpec, batch: int = 1) -> "LstmState":
        return cls(
            [np.zeros((n, batch)) for n in spec.hidden],
            [np.zeros((n, batch)) for n in spec.hidden],
        )


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, int]]:
    """Shapes of every learnable tensor, in canonical layer order."""
    shapes: dict[str, tuple[int, int]] = {}
    sizes = spec.layer_sizes
    if spec.kind == "lstm":
        for l, (m, p) in enumerate(zip(sizes[:-2], sizes[1:-1])):
            for g in GATES:
                shapes[f"l{l}.W{g}"] = (p, m)
                shapes[f"l{l}.U{g}"] = (p, p)
                shapes[f"l{l}.b{g}"] = (p, 1)
    else:
        for l, (m, p) in enumerate(zip(sizes[:-2], sizes[1:-1])):
            shapes[f"h{l}.W"] = (p, m)
            shapes[f"h{l}.b"] = (p, 1)
    shapes["out.W"] = (spec.out_width, sizes[-2])
    shapes["out.b"] = (spec.out_width, 1)
    return shapes


def is_output_param(name: str) -> bool:
    return name.startswith("out.")


def init_crisp(spec: ModelSpec, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, orthogonal LSTM recurrences, zero biases
    except the forget gate (ones); deterministic in the seed."""
    rng = substream(seed, "init")
    params: dict[str, np.ndarray] = {}
    for name, (p, m) in param_shapes(spec).items():
        leaf = name.split(".")[1]
        if leaf.startswith("U"):
            params[name] = _orthogonal(rng, p)
        elif leaf.startswith("W"):
            bound = math.sqrt(6.0 / (p + m))
            params[name] = rng.uniform(-bound, bound, size=(p, m))
        elif leaf == "bf":
            params[name] = np.ones((p, m))
        else:
            params[name] = np.zeros((p, m))
    return params


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def init_uncertainty(
    theta: dict[str, np.ndarray], r_h: float, r_o: float, trick: str
) -> UncertaintyParams:
    """Raw margins set to |theta| * rate so the trick maps them to exactly
    |theta| * rate on both sides (hidden rate r_h, output-layer rate r_o)."""
    for r, tag in ((r_h, "r_h"), (r_o, "r_o")):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"uncertainty rate {tag} must lie in [0, 1], got {r}")
    lower = {}
    for name, value in theta.items():
        rate = r_o if is_output_param(name) else r_h
        lower[name] = np.abs(value) * rate
    upper = {k: v.copy() for k, v in lower.items()}
    return UncertaintyParams(lower, upper)


def apply_trick(raw: np.ndarray, trick: str) -> np.ndarray:
    """Positivity map turning raw margin tensors into nonnegative margins."""
    if trick == "abs":
        return np.abs(raw)
    if trick == "relu":
        return np.maximum(raw, 0.0)
    raise ValueError(f"unknown margin trick {trick!r}")


def materialize(
    theta: dict[str, np.ndarray], delta: UncertaintyParams, trick: str
) -> dict[str, IntervalMatrix]:
    """Interval parameters [theta - lo_margin, theta + hi_margin]; the crisp
    value is enclosed by construction since margins are nonnegative."""
    out = {}
    for name, value in theta.items():
        lo = value - apply_trick(delta.lower[name], trick)
        hi = value + apply_trick(delta.upper[name], trick)
        out[name] = IntervalMatrix(lo, hi)
    return out


# --------------------------------------------------------------------- crisp


def _as_column(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def ff_forward(x, theta: dict[str, np.ndarray], spec: ModelSpec) -> np.ndarray:
    """Feedforward stack: activated hidden layers, affine final layer.

    Accepts a single column (m,) or a batch (m, B); returns matching shape.
    """
    squeeze = np.asarray(x).ndim == 1
    h = _as_column(x)
    if h.shape[0] != spec.input_width:
        raise ValueError(f"input width {h.shape[0]} != expected {spec.input_width}")
    act = _ACTIVATIONS[spec.activation]
    for l in range(len(spec.hidden)):
        h = act(theta[f"h{l}.W"] @ h + theta[f"h{l}.b"])
    y = theta["out.W"] @ h + theta["out.b"]
    return y[:, 0] if squeeze else y


def lstm_step(
    x, state: LstmState, theta: dict[str, np.ndarray], spec: ModelSpec
) -> tuple[np.ndarray, LstmState]:
    """One step of the stacked LSTM; returns the affine output and new state."""
    squeeze = np.asarray(x).ndim == 1
    inp = _as_column(x)
    new_h, new_c = [], []
    for l in range(len(spec.hidden)):
        i_g = sigmoid_values(theta[f"l{l}.Wi"] @ inp + theta[f"l{l}.Ui"] @ state.h[l] + theta[f"l{l}.bi"])
        f_g = sigmoid_values(theta[f"l{l}.Wf"] @ inp + theta[f"l{l}.Uf"] @ state.h[l] + theta[f"l{l}.bf"])
        o_g = sigmoid_values(theta[f"l{l}.Wo"] @ inp + theta[f"l{l}.Uo"] @ state.h[l] + theta[f"l{l}.bo"])
        q_g = np.tanh(theta[f"l{l}.Wc"] @ inp + theta[f"l{l}.Uc"] @ state.h[l] + theta[f"l{l}.bc"])
        c = f_g * state.c[l] + i_g * q_g
        h = o_g * np.tanh(c)
        new_c.append(c)
        new_h.append(h)
        inp = h
    y = theta["out.W"] @ inp + theta["out.b"]
    return (y[:, 0] if squeeze else y), LstmState(new_h, new_c)


def node_step(x, y_prev, theta: dict[str, np.ndarray], spec: ModelSpec):
    """Euler residual step: previous output plus the feedforward increment."""
    return y_prev + ff_forward(x, theta, spec)


# ------------------------------------------------------------------ interval


def _iv_affine(w: IntervalMatrix, x: IntervalMatrix, b: IntervalMatrix) -> IntervalMatrix:
    prod = iv_matmul(w, x)
    return IntervalMatrix(prod.lo + b.lo, prod.hi + b.hi)


def inn_forward(x, iv_params: dict[str, IntervalMatrix], spec: ModelSpec) -> IntervalMatrix:
    """Interval feedforward pass on a crisp input (lifted to degenerate)."""
    h = IntervalMatrix.degenerate(_as_column(x))
    act = _ACTIVATIONS[spec.activation]
    for l in range(len(spec.hidden)):
        h = iv_apply_monotone(_iv_affine(iv_params[f"h{l}.W"], h, iv_params[f"h{l}.b"]), act)
    return _iv_affine(iv_params["out.W"], h, iv_params["out.b"])


def ilstm_step(
    x,
    state: LstmState,
    theta: dict[str, np.ndarray],
    iv_params: dict[str, IntervalMatrix],
    spec: ModelSpec,
) -> tuple[IntervalMatrix, np.ndarray, LstmState]:
    """One interval LSTM step with state re-centering.

    The crisp network advances the carried state; the interval network is
    evaluated with its recurrent inputs fixed to degenerate copies of the
    crisp state, and only its within-step interval state exists.
    Returns (interval output, crisp output, new crisp state); outputs are
    column matrices regardless of the input's rank.
    """
    x = _as_column(x)
    y, new_state = lstm_step(x, state, theta, spec)
    inp = IntervalMatrix.degenerate(x)
    for l in range(len(spec.hidden)):
        h_prev = IntervalMatrix.degenerate(state.h[l])
        c_prev = IntervalMatrix.degenerate(state.c[l])
        gates = {}
        for g in GATES:
            z = iv_matmul(iv_params[f"l{l}.W{g}"], inp)
            zu = iv_matmul(iv_params[f"l{l}.U{g}"], h_prev)
            b = iv_params[f"l{l}.b{g}"]
            pre = IntervalMatrix(z.lo + zu.lo + b.lo, z.hi + zu.hi + b.hi)
            gates[g] = iv_apply_monotone(pre, np.tanh if g == "c" else sigmoid_values)
        c = _iv_add(iv_hadamard(gates["f"], c_prev), iv_hadamard(gates["i"], gates["c"]))
        inp = iv_hadamard(gates["o"], iv_apply_monotone(c, np.tanh))
    y_iv = _iv_affine(iv_params["out.W"], inp, iv_params["out.b"])
    return y_iv, y, new_state


def _iv_add(a: IntervalMatrix, b: IntervalMatrix) -> IntervalMatrix:
    return IntervalMatrix(a.lo + b.lo, a.hi + b.hi)


def inode_step(
    x,
    y_prev: np.ndarray,
    theta: dict[str, np.ndarray],
    iv_params: dict[str, IntervalMatrix],
    spec: ModelSpec,
) -> tuple[IntervalMatrix, np.ndarray]:
    """Interval Euler step re-centered on the crisp previous output."""
    x = _as_column(x)
    y = node_step(x, y_prev, theta, spec)
    inc = inn_forward(x, iv_params, spec)
    return IntervalMatrix(y_prev + inc.lo, y_prev + inc.hi), y


# ------------------------------------------------------------------ rollout


def lag_indices(spec: ModelSpec, k: int) -> tuple[list[int], list[int]]:
    """1-based sample indices feeding the regression vector at step k.

    First the input lags u(k - n_d), ..., u(k - n_d - n_x), then the output
    lags y(k-1), ..., y(k - n_y). Indices at or before the sequence start
    come out nonpositive and must read zero. Single source of truth for
    every rollout (crisp, interval, and baseline paths).
    """
    u_idx = [k - spec.n_d - j for j in range(spec.n_x + 1)]
    y_idx = [k - j for j in range(1, spec.n_y + 1)]
    return u_idx, y_idx


def regression_vector(spec: ModelSpec, u: np.ndarray, y_hist: list, k: int, batch: int) -> list:
    """Rows of the regression input at (1-based) step k, zero-padded."""
    zero = np.zeros((1, batch))
    u_idx, y_idx = lag_indices(spec, k)
    rows = [u[:, i - 1][None, :] if i >= 1 else zero for i in u_idx]
    rows += [y_hist[i - 1] if i >= 1 else zero for i in y_idx]
    return rows


def simulate(
    spec: ModelSpec,
    theta: dict[str, np.ndarray],
    delta: UncertaintyParams | None,
    u: np.ndarray,
    y1: float = 0.0,
) -> IntervalSeries:
    """Closed-loop rollout over a known input sequence.

    `y1` seeds the NODE integrator's previous-output state; lagged values
    before the first step read zero. With no margins the interval collapses
    onto the point prediction.
    """
    u = np.asarray(u, dtype=np.float64)
    horizon = len(u)
    if horizon < 1:
        raise ValueError("simulation horizon must be at least 1")
    iv_params = materialize(theta, delta, spec.trick) if delta is not None else None
    u2 = u[None, :]
    y_hist: list[np.ndarray] = []
    ys, los, his = [], [], []
    state = LstmState.zeros(spec, batch=1) if spec.kind == "lstm" else None
    y_prev = np.array([[float(y1)]])
    for k in range(1, horizon + 1):
        x = np.concatenate(regression_vector(spec, u2, y_hist, k, 1), axis=0)
        if spec.kind == "lstm":
            if iv_params is None:
                y, state = lstm_step(x, state, theta, spec)
                lo = hi = y
            else:
                y_iv, y, state = ilstm_step(x, state, theta, iv_params, spec)
                lo, hi = y_iv.lo, y_iv.hi
        elif spec.kind == "node":
            if iv_params is None:
                y = node_step(x, y_prev, theta, spec)
                lo = hi = y
            else:
                y_iv, y = inode_step(x, y_prev, theta, iv_params, spec)
                lo, hi = y_iv.lo, y_iv.hi
            y_prev = y
        else:
            if iv_params is None:
                y = ff_forward(x, theta, spec)
                lo = hi = y
            else:
                y_iv = inn_forward(x, iv_params, spec)
                y = ff_forward(x, theta, spec)
                lo, hi = y_iv.lo, y_iv.hi
        y_hist.append(y[:1, :])
        ys.append(y[0, 0])
        los.append(lo[0, 0])
        his.append(hi[0, 0])
    return IntervalSeries(np.array(ys), np.array(los), np.array(his))


def flatten_params(params: dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate tensors in name order; used for hashing and norms."""
    return np.concatenate([params[k].ravel() for k in sorted(params)]) if params else np.array([])


def sample_within(
    iv_params: dict[str, IntervalMatrix], rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """One uniform crisp selection from each parameter interval."""
    return {
        name: m.lo + rng.uniform(size=m.lo.shape) * (m.hi - m.lo) for name, m in iv_params.items()
    }
