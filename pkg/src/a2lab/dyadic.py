"""Dyadic intervals, Haar analysis and piecewise-constant functions.

A ``PiecewiseFn`` stores leaf values on the ``2**depth`` equal cells of a
dyadic support interval.  Values may be scalars, vectors in R^2 (trailing
axis 2) or packed symmetric matrices (trailing axis 3, see ``mat2``).

Haar functions are ``h_I = |I|^{-1/2} (1_{I+} - 1_{I-})`` where ``I+`` is the
right half.  Coefficient tables are lists indexed by level relative to the
support, ``coeffs[l][j]`` belonging to the ``j``-th interval of that level.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

DEFAULT_DEPTH_CAP = 24


class DepthError(ValueError):
    """Requested resolution exceeds what the function carries or the cap allows."""


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """``[index 2^-level, (index+1) 2^-level)``."""

    level: int
    index: int

    @property
    def left(self) -> Fraction:
        return Fraction(self.index, 2 ** self.level)

    @property
    def right(self) -> Fraction:
        return Fraction(self.index + 1, 2 ** self.level)

    @property
    def length(self) -> float:
        return 2.0 ** -self.level

    def children(self) -> tuple["DyadicInterval", "DyadicInterval"]:
        """``(I-, I+)``: left child first."""
        return (DyadicInterval(self.level + 1, 2 * self.index),
                DyadicInterval(self.level + 1, 2 * self.index + 1))

    @property
    def minus(self) -> "DyadicInterval":
        return DyadicInterval(self.level + 1, 2 * self.index)

    @property
    def plus(self) -> "DyadicInterval":
        return DyadicInterval(self.level + 1, 2 * self.index + 1)

    def parent(self) -> "DyadicInterval":
        return DyadicInterval(self.level - 1, self.index // 2)

    def sibling(self) -> "DyadicInterval":
        return DyadicInterval(self.level, self.index ^ 1)

    def descendants(self, k: int) -> list["DyadicInterval"]:
        """``ch^k(I)`` left to right."""
        base = self.index << k
        return [DyadicInterval(self.level + k, base + j) for j in range(2 ** k)]

    def contains(self, other: "DyadicInterval") -> bool:
        if other.level < self.level:
            return False
        return (other.index >> (other.level - self.level)) == self.index

    def in_root(self) -> bool:
        return self.level >= 0 and 0 <= self.index < 2 ** self.level

    def relative(self, ancestor: "DyadicInterval") -> tuple[int, int]:
        """Level and index of ``self`` inside ``ancestor``."""
        if not ancestor.contains(self):
            raise ValueError(f"{self} is not inside {ancestor}")
        k = self.level - ancestor.level
        return k, self.index - (ancestor.index << k)

    def __str__(self) -> str:
        return f"[{self.left}, {self.right})"


UNIT = DyadicInterval(0, 0)


@dataclass(frozen=True)
class PiecewiseFn:
    depth: int
    origin: DyadicInterval
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != 2 ** self.depth:
            raise ValueError(f"need {2 ** self.depth} cell values, got {vals.shape[0]}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value, depth: int = 0, origin: DyadicInterval = UNIT) -> "PiecewiseFn":
        value = np.asarray(value, dtype=float)
        vals = np.broadcast_to(value, (2 ** depth,) + value.shape).copy()
        return cls(depth, origin, vals)

    @property
    def value_shape(self) -> tuple:
        return self.values.shape[1:]

    @property
    def cell_length(self) -> float:
        return self.origin.length * 2.0 ** -self.depth

    def cell(self, j: int) -> DyadicInterval:
        return DyadicInterval(self.origin.level + self.depth, (self.origin.index << self.depth) + j)

    def cell_edges(self) -> np.ndarray:
        """Left endpoints of the cells plus the right end, as floats."""
        a = float(self.origin.left)
        return a + self.origin.length * np.arange(2 ** self.depth + 1) / 2 ** self.depth

    def refine(self, depth: int) -> "PiecewiseFn":
        if depth < self.depth:
            raise DepthError(f"cannot refine depth {self.depth} down to {depth}")
        if depth > DEFAULT_DEPTH_CAP:
            raise DepthError(f"depth {depth} exceeds cap {DEFAULT_DEPTH_CAP}")
        return PiecewiseFn(depth, self.origin, np.repeat(self.values, 2 ** (depth - self.depth), axis=0))

    def averages(self, level: int) -> np.ndarray:
        """Averages over the ``2**level`` intervals of relative ``level``."""
        if level > self.depth:
            return np.repeat(self.values, 2 ** (level - self.depth), axis=0)
        return self.values.reshape((2 ** level, 2 ** (self.depth - level)) + self.value_shape).mean(axis=1)

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def average_on(self, interval: DyadicInterval) -> np.ndarray:
        k, j = interval.relative(self.origin)
        return self.averages(k)[j] if k <= self.depth else self.values[j >> (k - self.depth)]

    def expectation(self, level: int) -> "PiecewiseFn":
        """``E_level f``: constant on intervals of relative ``level``."""
        level = min(level, self.depth)
        avg = self.averages(level)
        return PiecewiseFn(self.depth, self.origin, np.repeat(avg, 2 ** (self.depth - level), axis=0))

    def integral(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.cell_length

    def __add__(self, other: "PiecewiseFn") -> "PiecewiseFn":
        a, b = align(self, other)
        return PiecewiseFn(a.depth, a.origin, a.values + b.values)

    def __sub__(self, other: "PiecewiseFn") -> "PiecewiseFn":
        a, b = align(self, other)
        return PiecewiseFn(a.depth, a.origin, a.values - b.values)

    def __mul__(self, c: float) -> "PiecewiseFn":
        return PiecewiseFn(self.depth, self.origin, self.values * c)

    __rmul__ = __mul__

    def map_values(self, fn) -> "PiecewiseFn":
        return PiecewiseFn(self.depth, self.origin, fn(self.values))

    def to_csv(self) -> str:
        """Debug dump: one line per cell with exact dyadic endpoints."""
        lines = [f"# depth={self.depth} origin={self.origin.level},{self.origin.index}"]
        for j in range(2 ** self.depth):
            c = self.cell(j)
            vals = ",".join(repr(float(v)) for v in np.atleast_1d(self.values[j]))
            lines.append(f"{c.left},{c.right},{vals}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "PiecewiseFn":
        rows = [ln for ln in text.strip().splitlines()]
        head = rows[0].lstrip("# ").split()
        depth = int(head[0].split("=")[1])
        lv, ix = (int(t) for t in head[1].split("=")[1].split(","))
        vals = [[float(t) for t in ln.split(",")[2:]] for ln in rows[1:]]
        arr = np.array(vals)
        if arr.shape[1] == 1:
            arr = arr[:, 0]
        return cls(depth, DyadicInterval(lv, ix), arr)


def align(f: PiecewiseFn, g: PiecewiseFn) -> tuple[PiecewiseFn, PiecewiseFn]:
    """Refine two functions on the same support to a common depth."""
    if f.origin != g.origin:
        raise ValueError(f"grid mismatch: supports {f.origin} and {g.origin}")
    d = max(f.depth, g.depth)
    return f.refine(d), g.refine(d)


def inner(f: PiecewiseFn, g: PiecewiseFn) -> float:
    """Unweighted ``int (f, g)`` over the common support."""
    a, b = align(f, g)
    prod = a.values * b.values
    return float(prod.reshape(prod.shape[0], -1).sum() * a.cell_length)


# ---------------------------------------------------------------------------
# Haar transform

def haar_analyze(f: PiecewiseFn) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return ``<f>`` over the support and ``(f, h_I)`` for every level ``< depth``."""
    coeffs = []
    vals = f.values
    length = f.origin.length
    for level in range(f.depth - 1, -1, -1):
        pairs = vals.reshape((2 ** level, 2) + f.value_shape)
        minus, plus = pairs[:, 0], pairs[:, 1]
        size = length * 2.0 ** -level
        coeffs.append(0.5 * np.sqrt(size) * (plus - minus))
        vals = 0.5 * (plus + minus)
    coeffs.reverse()
    return vals[0], coeffs


def haar_synthesize(mean, coeffs: list[np.ndarray], origin: DyadicInterval = UNIT) -> PiecewiseFn:
    """Inverse of ``haar_analyze``."""
    mean = np.asarray(mean, dtype=float)
    vals = mean[None, ...]
    length = origin.length
    for level, c in enumerate(coeffs):
        c = np.asarray(c, dtype=float)
        size = length * 2.0 ** -level
        step = c / np.sqrt(size)
        out = np.empty((2 * vals.shape[0],) + vals.shape[1:])
        out[0::2] = vals - step
        out[1::2] = vals + step
        vals = out
    return PiecewiseFn(len(coeffs), origin, vals)


def zero_coeffs(depth: int, value_shape: tuple = ()) -> list[np.ndarray]:
    return [np.zeros((2 ** level,) + value_shape) for level in range(depth)]


def haar_function(interval: DyadicInterval, origin: DyadicInterval = UNIT,
                  depth: int | None = None, normalized: bool = True) -> PiecewiseFn:
    """``h_I`` (or ``hat h_I`` with ``normalized=False``) sampled on ``origin``."""
    k, j = interval.relative(origin)
    depth = k + 1 if depth is None else depth
    if depth < k + 1:
        raise DepthError("depth too small to resolve the Haar function")
    vals = np.zeros(2 ** depth)
    span = 2 ** (depth - k)
    vals[j * span: j * span + span // 2] = -1.0
    vals[j * span + span // 2: (j + 1) * span] = 1.0
    if normalized:
        vals /= np.sqrt(interval.length)
    return PiecewiseFn(depth, origin, vals)


def indicator(interval: DyadicInterval, origin: DyadicInterval = UNIT, depth: int | None = None) -> PiecewiseFn:
    k, j = interval.relative(origin)
    depth = k if depth is None else depth
    vals = np.zeros(2 ** depth)
    span = 2 ** (depth - k)
    vals[j * span:(j + 1) * span] = 1.0
    return PiecewiseFn(depth, origin, vals)


# ---------------------------------------------------------------------------
# martingale differences

def martingale_diff(f: PiecewiseFn, interval: DyadicInterval, order: int = 1) -> PiecewiseFn:
    """``Delta^order_I f = -E_I f + sum_{J in ch^order(I)} E_J f`` (supported on ``I``)."""
    k, j = interval.relative(f.origin)
    if k + order > f.depth:
        raise DepthError(f"order-{order} difference on level {k} needs depth {k + order}, have {f.depth}")
    span = 2 ** (f.depth - k)
    block = f.values[j * span:(j + 1) * span]
    fine = block.reshape((2 ** order, span // 2 ** order) + f.value_shape).mean(axis=1)
    out = np.zeros_like(f.values)
    out[j * span:(j + 1) * span] = np.repeat(fine, span // 2 ** order, axis=0) - block.mean(axis=0)
    return PiecewiseFn(f.depth, f.origin, out)


def martingale_diff2(f: PiecewiseFn, interval: DyadicInterval) -> PiecewiseFn:
    return martingale_diff(f, interval, 2)


def restrict(f: PiecewiseFn, interval: DyadicInterval) -> PiecewiseFn:
    """``f`` on a dyadic subinterval, as a function supported there."""
    k, j = interval.relative(f.origin)
    if k > f.depth:
        return PiecewiseFn.constant(f.values[j >> (k - f.depth)], 0, interval)
    span = 2 ** (f.depth - k)
    return PiecewiseFn(f.depth - k, interval, f.values[j * span:(j + 1) * span].copy())


def affine_pullback(f: PiecewiseFn, interval: DyadicInterval) -> PiecewiseFn:
    """``f o psi_{J,I}``: the copy of ``f`` (on ``J``) rescaled onto ``I``."""
    return PiecewiseFn(f.depth, interval, f.values.copy())


def embed(f: PiecewiseFn, origin: DyadicInterval, depth: int) -> PiecewiseFn:
    """Extend ``f`` by zero to a larger dyadic support, at total ``depth``."""
    k, j = f.origin.relative(origin)
    if depth < k + f.depth:
        raise DepthError("target depth cannot resolve the embedded function")
    out = np.zeros((2 ** depth,) + f.value_shape)
    span = 2 ** (depth - k)
    out[j * span:(j + 1) * span] = np.repeat(f.values, span // 2 ** f.depth, axis=0)
    return PiecewiseFn(depth, origin, out)
