"""Reverse-mode automatic differentiation over numpy arrays.

Values are computed eagerly; each operation appends a node to its tape, so
the tape's creation order is a topological order and backward() is a single
reverse sweep (no recursion, safe for deep rollouts). A tape is built per
loss evaluation and supports multiple backward passes (gradients are
accumulated in a scratch map, never stored on nodes).

Subgradient conventions: abs'(0) = 0, relu'(0) = 0, and ties in min4/max4
corner selections route the gradient to the first argument in the fixed
corner order (lo*lo, lo*hi, hi*lo, hi*hi).
"""

from __future__ import annotations

import numpy as np

__all__ = ["Node", "Tape", "sigmoid_values", "softplus_values"]


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on raw arrays."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_values(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Node:
    """One recorded value: the result array plus how to push gradients back.

    `vjp` maps the upstream gradient to [(parent, contribution), ...]; it is
    None for leaves (parameters and constants).
    """

    __slots__ = ("value", "op", "parents", "vjp", "name", "tape")

    def __init__(self, value, op, parents, vjp, tape, name=None):
        self.value = value
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Node(op={self.op}, shape={self.value.shape}{tag})"

    # Arithmetic sugar; scalars fold into scalar-mul / add-constant nodes.
    def __add__(self, other):
        return self.tape.add(self, self.tape.lift(other))

    def __radd__(self, other):
        return self.tape.add(self.tape.lift(other), self)

    def __sub__(self, other):
        return self.tape.sub(self, self.tape.lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self.tape.lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.scalar_mul(self, float(other))
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.tape.scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.scalar_mul(self, 1.0 / float(other))
        return self.tape.div(self, other)


class Tape:
    """Wengert list of eagerly evaluated nodes plus parameter registry."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    # ------------------------------------------------------------------ leaves

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        node = Node(np.asarray(value, dtype=np.float64), "param", (), None, self, name=name)
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64), "const", (), None, self)

    def lift(self, value) -> Node:
        return value if isinstance(value, Node) else self.constant(value)

    # ------------------------------------------------------------------ record

    def _record(self, op, value, parents, vjp) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), op, parents, vjp, self)
        self.nodes.append(node)
        return node

    def record(self, op: str, inputs: list, **kwargs) -> Node:
        """Name-dispatched recording (e.g. record("matmul", [a, b]))."""
        table = {
            "matmul": self.matmul,
            "add": self.add,
            "sub": self.sub,
            "hadamard": self.mul,
            "div": self.div,
            "sigmoid": self.sigmoid,
            "tanh": self.tanh,
            "abs": self.abs,
            "relu": self.relu,
            "softplus": self.softplus,
            "log": self.log,
            "min4": self.min4,
            "max4": self.max4,
            "square": self.square,
            "mean": self.mean,
            "sum": self.sum,
            "scalar-mul": self.scalar_mul,
            "select-branch": self.select_branch,
            "vstack": lambda *rows: self.vstack(list(rows)),
        }
        if op not in table:
            raise ValueError(f"unsupported op {op!r}")
        return table[op](*inputs, **kwargs)

    def add(self, a: Node, b: Node) -> Node:
        def vjp(g):
            return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

        return self._record("add", a.value + b.value, (a, b), vjp)

    def sub(self, a: Node, b: Node) -> Node:
        def vjp(g):
            return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))]

        return self._record("sub", a.value - b.value, (a, b), vjp)

    def mul(self, a: Node, b: Node) -> Node:
        def vjp(g):
            return [
                (a, _unbroadcast(g * b.value, a.shape)),
                (b, _unbroadcast(g * a.value, b.shape)),
            ]

        return self._record("hadamard", a.value * b.value, (a, b), vjp)

    def div(self, a: Node, b: Node) -> Node:
        def vjp(g):
            return [
                (a, _unbroadcast(g / b.value, a.shape)),
                (b, _unbroadcast(-g * a.value / (b.value * b.value), b.shape)),
            ]

        return self._record("div", a.value / b.value, (a, b), vjp)

    def scalar_mul(self, a: Node, c: float) -> Node:
        def vjp(g):
            return [(a, g * c)]

        return self._record("scalar-mul", a.value * c, (a,), vjp)

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")

        def vjp(g):
            return [(a, g @ b.value.T), (b, a.value.T @ g)]

        return self._record("matmul", a.value @ b.value, (a, b), vjp)

    def square(self, a: Node) -> Node:
        def vjp(g):
            return [(a, g * (2.0 * a.value))]

        return self._record("square", a.value * a.value, (a,), vjp)

    def sigmoid(self, a: Node) -> Node:
        s = sigmoid_values(a.value)

        def vjp(g):
            return [(a, g * s * (1.0 - s))]

        return self._record("sigmoid", s, (a,), vjp)

    def tanh(self, a: Node) -> Node:
        t = np.tanh(a.value)

        def vjp(g):
            return [(a, g * (1.0 - t * t))]

        return self._record("tanh", t, (a,), vjp)

    def abs(self, a: Node) -> Node:
        def vjp(g):
            return [(a, g * np.sign(a.value))]

        return self._record("abs", np.abs(a.value), (a,), vjp)

    def relu(self, a: Node) -> Node:
        def vjp(g):
            return [(a, g * (a.value > 0.0))]

        return self._record("relu", np.maximum(a.value, 0.0), (a,), vjp)

    def softplus(self, a: Node) -> Node:
        def vjp(g):
            return [(a, g * sigmoid_values(a.value))]

        return self._record("softplus", softplus_values(a.value), (a,), vjp)

    def log(self, a: Node) -> Node:
        def vjp(g):
            return [(a, g / a.value)]

        return self._record("log", np.log(a.value), (a,), vjp)

    def mean(self, a: Node) -> Node:
        n = a.value.size

        def vjp(g):
            return [(a, np.full(a.shape, float(g) / n))]

        return self._record("mean", np.asarray(a.value.mean()), (a,), vjp)

    def sum(self, a: Node) -> Node:
        def vjp(g):
            return [(a, np.full(a.shape, float(g)))]

        return self._record("sum", np.asarray(a.value.sum()), (a,), vjp)

    def vstack(self, rows: list[Node]) -> Node:
        sizes = [r.value.shape[0] for r in rows]
        offsets = np.cumsum([0] + sizes)

        def vjp(g):
            return [(r, g[offsets[i] : offsets[i + 1]]) for i, r in enumerate(rows)]

        return self._record("vstack", np.concatenate([r.value for r in rows], axis=0), tuple(rows), vjp)

    def select_branch(self, cond: Node, pos: Node, neg: Node) -> Node:
        """Elementwise pos where cond.value >= 0 else neg.

        The condition is treated as data (no gradient through the switch);
        the upstream gradient flows only into the selected branch.
        """
        mask = cond.value >= 0.0
        value = np.where(mask, pos.value, neg.value)

        def vjp(g):
            return [(pos, g * mask), (neg, g * ~mask)]

        return self._record("select-branch", value, (pos, neg), vjp)

    def min4(self, a: Node, b: Node, c: Node, d: Node) -> Node:
        return self._extremum((a, b, c, d), np.argmin)

    def max4(self, a: Node, b: Node, c: Node, d: Node) -> Node:
        return self._extremum((a, b, c, d), np.argmax)

    def min2(self, a: Node, b: Node) -> Node:
        return self._extremum((a, b), np.argmin)

    def max2(self, a: Node, b: Node) -> Node:
        return self._extremum((a, b), np.argmax)

    def _extremum(self, operands, argfn) -> Node:
        stacked = np.stack([o.value for o in operands])
        sel = argfn(stacked, axis=0)  # ties resolve to the first operand
        value = np.take_along_axis(stacked, sel[None], axis=0)[0]

        def vjp(g):
            return [(o, g * (sel == i)) for i, o in enumerate(operands)]

        tag = f"{'min' if argfn is np.argmin else 'max'}{len(operands)}"
        return self._record(tag, value, tuple(operands), vjp)

    # Interval matrix product bounds. Per output element the gradient flows
    # to exactly one corner of each contributing scalar product (ties to the
    # first corner in lo*lo, lo*hi, hi*lo, hi*hi order), matching min4/max4.
    def iv_matmul_lo(self, al: Node, ah: Node, bl: Node, bh: Node) -> Node:
        return self.iv_matmul_pair(al, ah, bl, bh)[0]

    def iv_matmul_hi(self, al: Node, ah: Node, bl: Node, bh: Node) -> Node:
        return self.iv_matmul_pair(al, ah, bl, bh)[1]

    def iv_matmul_pair(self, al: Node, ah: Node, bl: Node, bh: Node) -> tuple[Node, Node]:
        """Both bound matrices of the interval product, sharing one corner
        sweep. A degenerate right operand (bl is bh) uses a two-corner path."""
        if al.value.shape[1] != bl.value.shape[0]:
            raise ValueError(f"iv_matmul shape mismatch: {al.value.shape} @ {bl.value.shape}")
        if bl is bh:
            return self._iv_matmul_degenerate(al, ah, bl)
        m, p = al.value.shape
        n = bl.value.shape[1]
        corners = np.empty((4, m, p, n))
        alv = al.value[:, :, None]
        ahv = ah.value[:, :, None]
        blv = bl.value[None, :, :]
        bhv = bh.value[None, :, :]
        np.multiply(alv, blv, out=corners[0])
        np.multiply(alv, bhv, out=corners[1])
        np.multiply(ahv, blv, out=corners[2])
        np.multiply(ahv, bhv, out=corners[3])
        sel_lo = np.argmin(corners, axis=0)
        sel_hi = np.argmax(corners, axis=0)
        lo_value = corners.min(axis=0).sum(axis=1)
        hi_value = corners.max(axis=0).sum(axis=1)

        def make_vjp(sel):
            def vjp(g):
                ge = g[:, None, :]
                m0, m1, m2, m3 = (sel == 0), (sel == 1), (sel == 2), (sel == 3)
                return [
                    (al, ((m0 * blv + m1 * bhv) * ge).sum(axis=2)),
                    (ah, ((m2 * blv + m3 * bhv) * ge).sum(axis=2)),
                    (bl, ((m0 * alv + m2 * ahv) * ge).sum(axis=0)),
                    (bh, ((m1 * alv + m3 * ahv) * ge).sum(axis=0)),
                ]

            return vjp

        lo = self._record("iv-matmul-lo", lo_value, (al, ah, bl, bh), make_vjp(sel_lo))
        hi = self._record("iv-matmul-hi", hi_value, (al, ah, bl, bh), make_vjp(sel_hi))
        return lo, hi

    def _iv_matmul_degenerate(self, al: Node, ah: Node, b: Node) -> tuple[Node, Node]:
        """Interval-times-crisp product: only the lo*b and hi*b corners exist.

        Tie handling matches the four-corner path: for b == 0 all corners
        coincide and the gradient goes to the lower bound (first corner).
        """
        alv = al.value[:, :, None]
        ahv = ah.value[:, :, None]
        bv = b.value[None, :, :]
        p_lo = alv * bv
        p_hi = ahv * bv
        # ties route to the lower-bound operand, as in the four-corner path
        lo_takes_al = p_lo <= p_hi
        hi_takes_al = p_lo >= p_hi
        lo_value = np.minimum(p_lo, p_hi).sum(axis=1)
        hi_value = np.maximum(p_lo, p_hi).sum(axis=1)

        def make_vjp(al_mask):
            ah_mask = ~al_mask

            def vjp(g):
                ge = g[:, None, :]
                return [
                    (al, (al_mask * bv * ge).sum(axis=2)),
                    (ah, (ah_mask * bv * ge).sum(axis=2)),
                    (b, ((al_mask * alv + ah_mask * ahv) * ge).sum(axis=0)),
                ]

            return vjp

        lo = self._record("iv-matmul-lo", lo_value, (al, ah, b), make_vjp(lo_takes_al))
        hi = self._record("iv-matmul-hi", hi_value, (al, ah, b), make_vjp(hi_takes_al))
        return lo, hi

    # ---------------------------------------------------------------- backward

    def backward(self, root: Node) -> dict[str, np.ndarray]:
        """Accumulate d(root)/d(param) for every registered parameter.

        Returns a gradient per parameter name (zeros when the parameter does
        not reach the root). Multiple backward calls on one tape are
        independent.
        """
        if root.value.size != 1:
            raise ValueError("backward requires a scalar-valued root")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node.vjp is None:
                continue
            for parent, pg in node.vjp(g):
                key = id(parent)
                acc = grads.get(key)
                grads[key] = pg if acc is None else acc + pg
        return {
            name: grads.get(id(p), np.zeros_like(p.value)).reshape(p.shape)
            for name, p in self.params.items()
        }
