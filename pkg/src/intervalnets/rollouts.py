"""Gradient-tape rollouts of the crisp, interval, and Gaussian-head models.

These mirror the plain-array forwards in nets.py but record every step on a
tape so losses can be backpropagated through the closed-loop recursion
(full backpropagation through the window). Batches are laid out
feature-major: one column per window.

Interval tensors travel as (lo, hi) node pairs. Re-centering wraps the
crisp state nodes as both bounds, so gradients from the interval loss flow
back into the crisp parameters through the re-centered states as well as
through the interval endpoints.
"""

from __future__ import annotations

import numpy as np

from .grad import Node, Tape
from .nets import GATES, ModelSpec, lag_indices

__all__ = [
    "register_params",
    "interval_param_nodes",
    "crisp_rollout",
    "interval_rollout",
    "gaussian_rollout",
    "stack_steps",
]

IvPair = tuple[Node, Node]


def register_params(
    tape: Tape, tensors: dict[str, np.ndarray], trainable: bool, prefix: str = ""
) -> dict[str, Node]:
    """Put tensors on the tape, as parameters or as frozen constants."""
    out = {}
    for name, value in tensors.items():
        full = prefix + name
        out[name] = tape.param(full, value) if trainable else tape.constant(value)
    return out


def interval_param_nodes(
    tape: Tape,
    theta: dict[str, Node],
    raw_lo: dict[str, Node],
    raw_hi: dict[str, Node],
    trick: str,
) -> dict[str, IvPair]:
    """Materialize interval bounds [theta - trick(raw_lo), theta + trick(raw_hi)]."""
    positive = tape.abs if trick == "abs" else tape.relu
    out = {}
    for name, th in theta.items():
        out[name] = (
            tape.sub(th, positive(raw_lo[name])),
            tape.add(th, positive(raw_hi[name])),
        )
    return out


def stack_steps(tape: Tape, steps: list[Node]) -> Node:
    """Stack per-step (1, B) outputs into an (N, B) node."""
    return tape.vstack(steps)


def _lag_rows(
    tape: Tape, spec: ModelSpec, u: np.ndarray, y_hist: list[Node], k: int, zero: Node
) -> list[Node]:
    u_idx, y_idx = lag_indices(spec, k)
    rows = [tape.constant(u[:, i - 1][None, :]) if i >= 1 else zero for i in u_idx]
    rows += [y_hist[i - 1] if i >= 1 else zero for i in y_idx]
    return rows


def _ff_stack(
    tape: Tape,
    spec: ModelSpec,
    theta: dict[str, Node],
    x: Node,
    masks: dict[int, Node] | None,
) -> Node:
    act = tape.tanh if spec.activation == "tanh" else tape.sigmoid
    h = x
    for l in range(len(spec.hidden)):
        h = act(tape.add(tape.matmul(theta[f"h{l}.W"], h), theta[f"h{l}.b"]))
        if masks is not None and l in masks:
            h = tape.mul(h, masks[l])
    return tape.add(tape.matmul(theta["out.W"], h), theta["out.b"])


def _lstm_cell(
    tape: Tape,
    spec: ModelSpec,
    theta: dict[str, Node],
    x: Node,
    h_prev: list[Node],
    c_prev: list[Node],
    masks: dict[int, Node] | None,
) -> tuple[Node, list[Node], list[Node]]:
    inp = x
    new_h, new_c = [], []
    for l in range(len(spec.hidden)):
        pre = {}
        for g in GATES:
            z = tape.add(
                tape.add(
                    tape.matmul(theta[f"l{l}.W{g}"], inp),
                    tape.matmul(theta[f"l{l}.U{g}"], h_prev[l]),
                ),
                theta[f"l{l}.b{g}"],
            )
            pre[g] = tape.tanh(z) if g == "c" else tape.sigmoid(z)
        c = tape.add(tape.mul(pre["f"], c_prev[l]), tape.mul(pre["i"], pre["c"]))
        h = tape.mul(pre["o"], tape.tanh(c))
        new_c.append(c)
        new_h.append(h)
        # Dropout (when present) affects only the copy flowing upward; the
        # recurrent state carries the undropped activation.
        inp = tape.mul(h, masks[l]) if masks is not None and l in masks else h
    out = tape.add(tape.matmul(theta["out.W"], inp), theta["out.b"])
    return out, new_h, new_c


def crisp_rollout(
    tape: Tape,
    spec: ModelSpec,
    theta: dict[str, Node],
    u: np.ndarray,
    y_init: np.ndarray | None = None,
    masks: dict[int, Node] | None = None,
) -> list[Node]:
    """Closed-loop crisp rollout; returns one (1, B) output node per step."""
    batch, horizon = u.shape
    zero = tape.constant(np.zeros((1, batch)))
    y_hist: list[Node] = []
    if spec.kind == "lstm":
        h = [tape.constant(np.zeros((n, batch))) for n in spec.hidden]
        c = [tape.constant(np.zeros((n, batch))) for n in spec.hidden]
    y_prev = tape.constant(
        np.zeros((1, batch)) if y_init is None else np.asarray(y_init, dtype=np.float64)[None, :]
    )
    for k in range(1, horizon + 1):
        x = tape.vstack(_lag_rows(tape, spec, u, y_hist, k, zero))
        if spec.kind == "lstm":
            y, h, c = _lstm_cell(tape, spec, theta, x, h, c, masks)
        elif spec.kind == "node":
            y = tape.add(y_prev, _ff_stack(tape, spec, theta, x, masks))
            y_prev = y
        else:
            y = _ff_stack(tape, spec, theta, x, masks)
        y_hist.append(y)
    return y_hist


# ---------------------------------------------------------------- interval


def _iv_affine(tape: Tape, w: IvPair, x: IvPair, b: IvPair) -> IvPair:
    lo, hi = tape.iv_matmul_pair(w[0], w[1], x[0], x[1])
    return tape.add(lo, b[0]), tape.add(hi, b[1])


def _iv_mul(tape: Tape, a: IvPair, b: IvPair) -> IvPair:
    """Elementwise interval product; degenerate operands need fewer corners."""
    if a[0] is a[1] and b[0] is b[1]:
        p = tape.mul(a[0], b[0])
        return p, p
    if b[0] is b[1]:
        p1 = tape.mul(a[0], b[0])
        p2 = tape.mul(a[1], b[0])
        return tape.min2(p1, p2), tape.max2(p1, p2)
    if a[0] is a[1]:
        p1 = tape.mul(a[0], b[0])
        p2 = tape.mul(a[0], b[1])
        return tape.min2(p1, p2), tape.max2(p1, p2)
    p1 = tape.mul(a[0], b[0])
    p2 = tape.mul(a[0], b[1])
    p3 = tape.mul(a[1], b[0])
    p4 = tape.mul(a[1], b[1])
    return tape.min4(p1, p2, p3, p4), tape.max4(p1, p2, p3, p4)


def _iv_add(tape: Tape, a: IvPair, b: IvPair) -> IvPair:
    return tape.add(a[0], b[0]), tape.add(a[1], b[1])


def _iv_act(tape: Tape, a: IvPair, kind: str) -> IvPair:
    op = tape.tanh if kind == "tanh" else tape.sigmoid
    return op(a[0]), op(a[1])


def _iv_ff_stack(tape: Tape, spec: ModelSpec, ivp: dict[str, IvPair], x: IvPair) -> IvPair:
    h = x
    for l in range(len(spec.hidden)):
        h = _iv_act(tape, _iv_affine(tape, ivp[f"h{l}.W"], h, ivp[f"h{l}.b"]), spec.activation)
    return _iv_affine(tape, ivp["out.W"], h, ivp["out.b"])


def _iv_lstm_cell(
    tape: Tape,
    spec: ModelSpec,
    ivp: dict[str, IvPair],
    x: IvPair,
    h_prev: list[Node],
    c_prev: list[Node],
) -> IvPair:
    """Interval gates with recurrent inputs re-centered on the crisp state."""
    inp = x
    for l in range(len(spec.hidden)):
        hp: IvPair = (h_prev[l], h_prev[l])
        cp: IvPair = (c_prev[l], c_prev[l])
        gates = {}
        for g in GATES:
            z = _iv_add(
                tape,
                _iv_affine(tape, ivp[f"l{l}.W{g}"], inp, ivp[f"l{l}.b{g}"]),
                _iv_matmul_pair(tape, ivp[f"l{l}.U{g}"], hp),
            )
            gates[g] = _iv_act(tape, z, "tanh" if g == "c" else "sigmoid")
        c = _iv_add(tape, _iv_mul(tape, gates["f"], cp), _iv_mul(tape, gates["i"], gates["c"]))
        inp = _iv_mul(tape, gates["o"], _iv_act(tape, c, "tanh"))
    return _iv_affine(tape, ivp["out.W"], inp, ivp["out.b"])


def _iv_matmul_pair(tape: Tape, w: IvPair, x: IvPair) -> IvPair:
    return tape.iv_matmul_pair(w[0], w[1], x[0], x[1])


def interval_rollout(
    tape: Tape,
    spec: ModelSpec,
    theta: dict[str, Node],
    ivp: dict[str, IvPair],
    u: np.ndarray,
    y_init: np.ndarray | None = None,
) -> tuple[list[Node], list[Node], list[Node]]:
    """Joint crisp + interval rollout with per-step re-centering.

    Returns per-step (crisp, lower, upper) output nodes. The regression
    vector and all recurrent inputs are the crisp network's, lifted to
    degenerate intervals, so containment of the crisp output holds step by
    step and widths do not compound over time.
    """
    batch, horizon = u.shape
    zero = tape.constant(np.zeros((1, batch)))
    y_hist: list[Node] = []
    los: list[Node] = []
    his: list[Node] = []
    if spec.kind == "lstm":
        h = [tape.constant(np.zeros((n, batch))) for n in spec.hidden]
        c = [tape.constant(np.zeros((n, batch))) for n in spec.hidden]
    y_prev = tape.constant(
        np.zeros((1, batch)) if y_init is None else np.asarray(y_init, dtype=np.float64)[None, :]
    )
    for k in range(1, horizon + 1):
        x = tape.vstack(_lag_rows(tape, spec, u, y_hist, k, zero))
        xi: IvPair = (x, x)
        if spec.kind == "lstm":
            lo, hi = _iv_lstm_cell(tape, spec, ivp, xi, h, c)
            y, h, c = _lstm_cell(tape, spec, theta, x, h, c, None)
        elif spec.kind == "node":
            flo, fhi = _iv_ff_stack(tape, spec, ivp, xi)
            lo = tape.add(y_prev, flo)
            hi = tape.add(y_prev, fhi)
            y = tape.add(y_prev, _ff_stack(tape, spec, theta, x, None))
            y_prev = y
        else:
            lo, hi = _iv_ff_stack(tape, spec, ivp, xi)
            y = _ff_stack(tape, spec, theta, x, None)
        y_hist.append(y)
        los.append(lo)
        his.append(hi)
    return y_hist, los, his


# ------------------------------------------------------------ gaussian head


def gaussian_rollout(
    tape: Tape,
    spec: ModelSpec,
    theta: dict[str, Node],
    u: np.ndarray,
    y_init: np.ndarray | None = None,
    masks: dict[int, Node] | None = None,
) -> tuple[list[Node], list[Node]]:
    """Rollout of a two-channel (mean, raw variance) network.

    The mean channel follows the closed-loop recursion (and, for the NODE
    kind, the Euler residual); the variance channel is read directly per
    step through a softplus. Returns per-step (mu, var) nodes of shape (1, B).
    """
    if spec.out_width != 2:
        raise ValueError("gaussian rollout needs a two-channel output head")
    batch, horizon = u.shape
    zero = tape.constant(np.zeros((1, batch)))
    pick_mu = tape.constant(np.array([[1.0, 0.0]]))
    pick_var = tape.constant(np.array([[0.0, 1.0]]))
    mu_hist: list[Node] = []
    vars_: list[Node] = []
    if spec.kind == "lstm":
        h = [tape.constant(np.zeros((n, batch))) for n in spec.hidden]
        c = [tape.constant(np.zeros((n, batch))) for n in spec.hidden]
    mu_prev = tape.constant(
        np.zeros((1, batch)) if y_init is None else np.asarray(y_init, dtype=np.float64)[None, :]
    )
    for k in range(1, horizon + 1):
        x = tape.vstack(_lag_rows(tape, spec, u, mu_hist, k, zero))
        if spec.kind == "lstm":
            out, h, c = _lstm_cell(tape, spec, theta, x, h, c, masks)
            mu = tape.matmul(pick_mu, out)
        elif spec.kind == "node":
            out = _ff_stack(tape, spec, theta, x, masks)
            mu = tape.add(mu_prev, tape.matmul(pick_mu, out))
            mu_prev = mu
        else:
            out = _ff_stack(tape, spec, theta, x, masks)
            mu = tape.matmul(pick_mu, out)
        var = tape.softplus(tape.matmul(pick_var, out))
        mu_hist.append(mu)
        vars_.append(var)
    return mu_hist, vars_
