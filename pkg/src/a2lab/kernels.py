"""Hilbert-transform pairings of piecewise-constant functions.

Both pairings are written through the jumps of the two functions.  A
piecewise constant ``f`` with compact support is ``sum_m J_m H(x - x_m)``
(``H`` the Heaviside step), so bilinear forms reduce to double sums over
jump pairs:

* line: ``(H^R f, g) = (1/pi) sum J^f_m . J^g_n F(y_n - x_m)`` with
  ``F(x) = x - x log|x|``;
* circle (``I`` rescaled to ``[0,1)``, normalised measure):
  ``(H^T f, g) = -(1/(2 pi^2)) sum J^f_m . J^g_n Cl(x_m - y_n)`` with the
  Clausen-type series ``Cl(d) = sum_{k>=1} sin(2 pi k d)/k^2``.

``Cl`` is summed either by truncation at ``K`` terms (tail below ``1/K``)
or, when all jumps sit on a dyadic grid of ``P`` points, exactly through the
period-``P`` structure of the summand and the trigamma function.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import polygamma

from .dyadic import UNIT, DyadicInterval, PiecewiseFn, haar_function, inner
from .operators import hdy

DEFAULT_K = 2 ** 20
C0_EXACT = -np.log(2) / np.pi


class TruncationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# jumps

def jumps(f: PiecewiseFn, periodic: bool = False):
    """Positions (absolute, or relative to the support when ``periodic``) and jump vectors."""
    vals = f.values.reshape(f.values.shape[0], -1)
    zero = np.zeros((1, vals.shape[1]))
    if periodic:
        prev = np.concatenate([vals[-1:], vals[:-1]])
        d = vals - prev
        pos = np.arange(vals.shape[0]) / vals.shape[0]
    else:
        d = np.diff(np.concatenate([zero, vals, zero]), axis=0)
        edges = f.cell_edges()
        pos = edges
    keep = np.any(d != 0, axis=1)
    return pos[keep], d[keep]


def _F(x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x - x * np.log(np.where(ax > 0, ax, 1.0))
    return np.where(ax > 0, out, 0.0)


def pairing_line(f: PiecewiseFn, g: PiecewiseFn) -> float:
    """``(H^R f, g)_{L2(R)}`` in closed form; vector values pair by dot product."""
    xf, jf = jumps(f)
    xg, jg = jumps(g)
    if len(xf) == 0 or len(xg) == 0:
        return 0.0
    K = _F(xg[None, :] - xf[:, None])
    return float(np.einsum("mc,mn,nc->", jf, K, jg) / np.pi)


def hilbert_line(f: PiecewiseFn, s):
    """``H^R f(s)`` at points ``s`` (off the jump set)."""
    xf, jf = jumps(f)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    L = np.log(np.abs(s[:, None] - xf[None, :]))
    return (L @ jf) / np.pi


# ---------------------------------------------------------------------------
# circle

def _cl_truncated(d, K: int, chunk: int = 2 ** 16):
    d = np.asarray(d, dtype=float)
    out = np.zeros(d.shape)
    flat = d.reshape(-1)
    acc = np.zeros(flat.shape)
    for k0 in range(1, K + 1, chunk):
        k = np.arange(k0, min(K, k0 + chunk - 1) + 1, dtype=float)
        acc += np.sin(2 * np.pi * np.outer(flat, k)) @ (1.0 / k ** 2)
    out[...] = acc.reshape(d.shape)
    return out


@lru_cache(maxsize=64)
def _cl_table(P: int, K: int) -> np.ndarray:
    """Truncated ``Cl(p/P)`` for ``p = 0..P-1``."""
    return _cl_truncated(np.arange(P) / P, K)


def _cl_exact(p, P: int):
    """``Cl(p/P)`` for integer ``p``: the summand has period ``P`` in ``k``."""
    r = np.arange(1, P + 1)
    w = polygamma(1, r / P) / P ** 2
    return np.sin(2 * np.pi * np.outer(np.asarray(p).reshape(-1), r) / P) @ w


def _circle_jumps(f: PiecewiseFn, g: PiecewiseFn):
    if f.origin != g.origin:
        raise ValueError(f"grid mismatch: {f.origin} vs {g.origin}")
    d = max(f.depth, g.depth)
    f, g = f.refine(d), g.refine(d)
    xf, jf = jumps(f, periodic=True)
    xg, jg = jumps(g, periodic=True)
    return d, xf, jf, xg, jg


@dataclass
class CirclePairing:
    value: float
    K: int | None
    error_bound: float
    method: str


def pairing_circle(f: PiecewiseFn, g: PiecewiseFn, K: int | None = DEFAULT_K,
                   tol: float | None = None) -> CirclePairing:
    """``(H^T_I f, g)_{L2(I, |I|^-1 dx)}`` for ``f``, ``g`` on the same interval ``I``.

    ``K=None`` selects the exact periodic evaluation.  With a finite ``K`` the
    reported bound is ``sum |J^f||J^g| / (2 pi^2 K)``; a ``tol`` below it
    raises ``TruncationError`` naming the ``K`` that would be needed.
    """
    d, xf, jf, xg, jg = _circle_jumps(f, g)
    if len(xf) == 0 or len(xg) == 0:
        return CirclePairing(0.0, K, 0.0, "exact" if K is None else "truncated")
    mass = float(np.linalg.norm(jf, axis=1).sum() * np.linalg.norm(jg, axis=1).sum()) / (2 * np.pi ** 2)
    P = 2 ** d
    pm = np.rint(xf * P).astype(np.int64)
    pn = np.rint(xg * P).astype(np.int64)
    diff = np.mod(pm[:, None] - pn[None, :], P)
    uniq, inv = np.unique(diff, return_inverse=True)
    if K is None:
        cl = _cl_exact(uniq, P)
        bound, method = 0.0, "exact"
    else:
        bound = mass / K
        if tol is not None and bound > tol:
            need = int(np.ceil(mass / tol))
            raise TruncationError(f"K = {K} gives error bound {bound:.3g} > {tol}; need K >= {need}")
        cl = _cl_table(P, K)[uniq] if P <= 4096 else _cl_truncated(uniq / P, K)
        method = "truncated"
    C = cl[inv.reshape(diff.shape)]
    val = -float(np.einsum("mc,mn,nc->", jf, C, jg)) / (2 * np.pi ** 2)
    return CirclePairing(val, K, bound, method)


# ---------------------------------------------------------------------------
# constants

@dataclass
class KernelConstants:
    c0: float
    c1: float
    c2: float
    c1_rotated: float          # -(H^T h_I0, h_I0-)
    c0_error: float
    c1_error: float
    c2_error: float
    methods: dict

    @property
    def hdy(self) -> tuple[float, float]:
        return self.c1, self.c2


def _h(I: DyadicInterval, depth: int = 2) -> PiecewiseFn:
    return haar_function(I, UNIT, depth)


def compute_constants(tol: float = 1e-8, K: int = DEFAULT_K) -> KernelConstants:
    """``c0`` by the line closed form; ``c1``, ``c2`` on the circle at ``K`` and ``4K``,
    cross-checked against the exact periodic sum."""
    if tol < 1e-8:
        raise ValueError("tol must be >= 1e-8")
    I0 = UNIT
    m, p = I0.minus, I0.plus
    c0 = pairing_line(_h_ind(p), _h_ind(m))
    vals, errs = {}, {}
    for name, (a, b) in dict(c1=(I0, p), c1m=(I0, m), c2=(p, m)).items():
        exact = pairing_circle(_h(a), _h(b), None).value
        lo = pairing_circle(_h(a), _h(b), K)
        hi = pairing_circle(_h(a), _h(b), 4 * K)
        vals[name] = exact
        errs[name] = max(abs(lo.value - hi.value), abs(hi.value - exact))
    c1, c2 = vals["c1"], vals["c2"]
    if c1 == 0:
        raise ValueError("c1 vanished")
    return KernelConstants(c0, c1, c2, -vals["c1m"], abs(c0 - C0_EXACT), errs["c1"], errs["c2"],
                           dict(c0="line closed form", c1=f"circle exact; truncation K={K},{4 * K}",
                                c2=f"circle exact; truncation K={K},{4 * K}"))


def _h_ind(I: DyadicInterval) -> PiecewiseFn:
    vals = np.zeros(2)
    vals[I.index] = 1.0
    return PiecewiseFn(1, UNIT, vals)


# ---------------------------------------------------------------------------
# circle pairing against the dyadic model on Ran Delta^2_I

def ran_delta2(I: DyadicInterval, coeffs) -> PiecewiseFn:
    """``x_I |I|^{1/2} h_I + x_- |I|^{1/2} h_{I-} + x_+ |I|^{1/2} h_{I+}`` on origin ``I``."""
    xI, xm, xp = (np.asarray(c, dtype=float) for c in coeffs)
    # on I rescaled to [0,1): |I|^{1/2} h_I -> h_{I0}, etc.
    v = np.stack([-xI - np.sqrt(2) * xm, -xI + np.sqrt(2) * xm,
                  xI - np.sqrt(2) * xp, xI + np.sqrt(2) * xp])
    return PiecewiseFn(2, I, v)


def hdy_pairing_on(I: DyadicInterval, f: PiecewiseFn, g: PiecewiseFn, c1: float, c2: float) -> float:
    """``(H^dy f, g)_{L2(I, |I|^-1 dx)}`` with ``I`` taken as an odd interval."""
    # after rescaling I to [0,1) it sits at level 0, hence the "even" anchor
    ff = PiecewiseFn(f.depth, UNIT, f.values)
    gg = PiecewiseFn(g.depth, UNIT, g.values)
    out = hdy(max(ff.depth, gg.depth), c1, c2, "even").apply(ff)
    return inner(out, gg)


def coefficient_matrix(I: DyadicInterval, K: int | None = None) -> np.ndarray:
    """``[(H^T_I b_j, b_i)]`` in the orthonormal basis ``|I|^{1/2}(h_I, h_{I-}, h_{I+})`` of ``L2(I)``."""
    basis = [ran_delta2(I, e) for e in np.eye(3)]
    return np.array([[pairing_circle(basis[j], basis[i], K).value for j in range(3)] for i in range(3)])


def expected_matrix(c1: float, c2: float) -> np.ndarray:
    return np.array([[0, c1, -c1], [-c1, 0, c2], [c1, -c2, 0]])


def htvsdyadic_check(I: DyadicInterval, f: PiecewiseFn, g: PiecewiseFn, constants: KernelConstants,
                     tol: float = 1e-6, K: int | None = DEFAULT_K) -> dict:
    """Compare ``(H^T_I f, g)`` with ``(H^dy f, g)`` for ``f, g`` in ``Ran Delta^2_I``."""
    for name, u in (("f", f), ("g", g)):
        if u.origin != I or u.depth > 2 or np.any(np.abs(u.values.reshape(4 if u.depth == 2 else -1, -1).sum(0)) > 1e-12):
            raise ValueError(f"{name} is not in Ran Delta^2_I")
    lhs = pairing_circle(f, g, K)
    rhs = hdy_pairing_on(I, f, g, *constants.hdy)
    M = coefficient_matrix(I, None)
    return dict(lhs=lhs.value, rhs=rhs, deviation=abs(lhs.value - rhs), error_bound=lhs.error_bound,
                ok=abs(lhs.value - rhs) <= tol,
                matrix_error=float(np.abs(M - expected_matrix(*constants.hdy)).max()))
