"""Closed-interval scalar and matrix arithmetic.

All values are plain float64; bounds are computed in nearest-rounding
arithmetic (no directed rounding), which is tight enough for learning-scale
tolerances. Every operation preserves lo <= hi and encloses all crisp
selections of its operands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Interval",
    "IntervalMatrix",
    "iv_add",
    "iv_sub",
    "iv_mul",
    "iv_matmul",
    "iv_hadamard",
    "iv_contains",
    "iv_apply_monotone",
]


@dataclass(frozen=True)
class Interval:
    """A closed real interval [lo, hi]; degenerate (lo == hi) means crisp."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"interval bounds must be finite, got [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValueError(f"interval lower bound exceeds upper: [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def is_degenerate(self) -> bool:
        return self.lo == self.hi

    def __repr__(self) -> str:
        return f"[{self.lo}, {self.hi}]"


class IntervalMatrix:
    """Elementwise interval matrix: two float64 arrays of identical shape."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if lo.ndim != 2 or hi.ndim != 2:
            raise ValueError("interval matrices must be 2-D")
        if lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("interval matrix bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("interval matrix has entries with lo > hi")
        self.lo = lo
        self.hi = hi

    @classmethod
    def degenerate(cls, values) -> "IntervalMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, values.copy())

    @property
    def shape(self) -> tuple[int, int]:
        return self.lo.shape

    @property
    def rows(self) -> int:
        return self.lo.shape[0]

    @property
    def cols(self) -> int:
        return self.lo.shape[1]

    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, values, slack: float = 0.0) -> bool:
        values = np.asarray(values, dtype=np.float64)
        return bool(np.all(values >= self.lo - slack) and np.all(values <= self.hi + slack))

    def __repr__(self) -> str:
        return f"IntervalMatrix(shape={self.shape})"


def iv_add(a: Interval, b: Interval) -> Interval:
    return Interval(a.lo + b.lo, a.hi + b.hi)


def iv_sub(a: Interval, b: Interval) -> Interval:
    return Interval(a.lo - b.hi, a.hi - b.lo)


def iv_mul(a: Interval, b: Interval) -> Interval:
    corners = (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
    return Interval(min(corners), max(corners))


def iv_contains(a: Interval, x: float) -> bool:
    return a.lo <= x <= a.hi


def _corner_products(a: IntervalMatrix, b: IntervalMatrix) -> np.ndarray:
    """The four corner element-product tensors, shape (4, m, p, n).

    Entry [c, i, k, j] is the product of the k-th element of row i of `a`
    and the k-th element of column j of `b`, at bound corner c in the fixed
    order (lo*lo, lo*hi, hi*lo, hi*hi).
    """
    al = a.lo[:, :, None]
    ah = a.hi[:, :, None]
    bl = b.lo[None, :, :]
    bh = b.hi[None, :, :]
    return np.stack([al * bl, al * bh, ah * bl, ah * bh])


def iv_matmul(a: IntervalMatrix, b: IntervalMatrix) -> IntervalMatrix:
    """Interval matrix product with exact per-element corner bounds.

    Each scalar product contributes its own extreme corner, so the bounds
    are the tightest enclosure of {A@B : A in a, B in b} achievable by
    summing elementwise extremes.
    """
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    corners = _corner_products(a, b)
    lo = corners.min(axis=0).sum(axis=1)
    hi = corners.max(axis=0).sum(axis=1)
    return IntervalMatrix(lo, hi)


def iv_hadamard(a: IntervalMatrix, b: IntervalMatrix) -> IntervalMatrix:
    """Entrywise interval product of same-shape interval matrices."""
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    corners = np.stack([a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi])
    return IntervalMatrix(corners.min(axis=0), corners.max(axis=0))


def iv_apply_monotone(a: IntervalMatrix, f: Callable[[np.ndarray], np.ndarray]) -> IntervalMatrix:
    """Apply a nondecreasing scalar function to both bounds.

    Valid only for monotone nondecreasing f (sigmoid, tanh); endpoint
    evaluation then yields the exact image interval.
    """
    return IntervalMatrix(f(a.lo), f(a.hi))
