"""2x2 symmetric positive-definite linear algebra.

Two representations live here:

* ``SymMat2`` and the array helpers (``sym_*``) store a symmetric matrix by
  its three entries ``(a11, a12, a22)``.  Arrays of shape ``(..., 3)`` are
  used for piecewise-constant matrix-valued functions.
* ``Spectral2`` stores a frame angle plus two eigenvalues as ``mpmath.mpf``
  numbers.  ``mpf`` carries an unbounded binary exponent, which is what the
  deep stopping trees need: eigenvalues there grow like ``2**n`` for ``n`` in
  the thousands and would overflow a double.

Square roots always use the closed form
``sqrt(M) = (M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np


class DomainError(ValueError):
    """Input outside the domain of a 2x2 operation."""


# ---------------------------------------------------------------------------
# entrywise representation

@dataclass(frozen=True)
class SymMat2:
    a11: float
    a12: float
    a22: float

    @classmethod
    def from_array(cls, m) -> "SymMat2":
        m = np.asarray(m, dtype=float)
        if m.shape == (3,):
            return cls(float(m[0]), float(m[1]), float(m[2]))
        if m.shape != (2, 2):
            raise DomainError(f"expected a 2x2 or packed 3-vector, got shape {m.shape}")
        if abs(m[0, 1] - m[1, 0]) > 1e-12 * max(1.0, np.abs(m).max()):
            raise DomainError("matrix is not symmetric")
        return cls(float(m[0, 0]), 0.5 * float(m[0, 1] + m[1, 0]), float(m[1, 1]))

    @classmethod
    def diag(cls, d1: float, d2: float) -> "SymMat2":
        return cls(float(d1), 0.0, float(d2))

    @classmethod
    def identity(cls) -> "SymMat2":
        return cls(1.0, 0.0, 1.0)

    @property
    def packed(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.a22])

    def to_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12

    def is_pd(self) -> bool:
        return self.a11 > 0 and self.det > 0

    def eigvals(self) -> tuple[float, float]:
        """Eigenvalues, largest first."""
        lo, hi = sym_eigvals(self.packed)
        return float(hi), float(lo)

    def inv(self) -> "SymMat2":
        return SymMat2.from_array(sym_inv(self.packed))

    def sqrt(self) -> "SymMat2":
        return SymMat2.from_array(sym_sqrt(self.packed))

    def __add__(self, other: "SymMat2") -> "SymMat2":
        return SymMat2(self.a11 + other.a11, self.a12 + other.a12, self.a22 + other.a22)

    def __sub__(self, other: "SymMat2") -> "SymMat2":
        return SymMat2(self.a11 - other.a11, self.a12 - other.a12, self.a22 - other.a22)

    def __mul__(self, c: float) -> "SymMat2":
        return SymMat2(c * self.a11, c * self.a12, c * self.a22)

    __rmul__ = __mul__

    def __matmul__(self, x):
        return self.to_array() @ np.asarray(x, dtype=float)

    def congruence(self, a: "SymMat2") -> "SymMat2":
        """Return ``a @ self @ a`` (symmetric because ``a`` is)."""
        return SymMat2.from_array(sym_congruence(self.packed, a.packed))


def _require_pd(m: SymMat2, name: str) -> None:
    if not m.is_pd():
        raise DomainError(f"{name} is not positive definite: {m}")


# ---------------------------------------------------------------------------
# vectorised helpers on packed arrays (..., 3)

def sym_det(m):
    m = np.asarray(m, dtype=float)
    return m[..., 0] * m[..., 2] - m[..., 1] ** 2


def sym_trace(m):
    m = np.asarray(m, dtype=float)
    return m[..., 0] + m[..., 2]


def sym_eigvals(m):
    """Closed-form eigenvalues ``(lo, hi)`` of packed symmetric matrices."""
    m = np.asarray(m, dtype=float)
    half_tr = 0.5 * (m[..., 0] + m[..., 2])
    rad = np.hypot(0.5 * (m[..., 0] - m[..., 2]), m[..., 1])
    hi = half_tr + rad
    # product form for the small root avoids cancellation
    det = sym_det(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(hi > 0, det / np.where(hi > 0, hi, 1.0), half_tr - rad)
    return lo, hi


def sym_inv(m):
    m = np.asarray(m, dtype=float)
    d = sym_det(m)
    return np.stack([m[..., 2] / d, -m[..., 1] / d, m[..., 0] / d], axis=-1)


def sym_sqrt(m):
    """Principal square root of packed PSD matrices (closed form)."""
    m = np.asarray(m, dtype=float)
    sd = np.sqrt(np.maximum(sym_det(m), 0.0))
    denom = np.sqrt(sym_trace(m) + 2 * sd)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), 0.0)
    return np.stack([(m[..., 0] + sd) * s, m[..., 1] * s, (m[..., 2] + sd) * s], axis=-1)


def sym_congruence(m, a):
    """Packed ``a @ m @ a`` for symmetric ``a``."""
    m = np.asarray(m, dtype=float)
    a = np.asarray(a, dtype=float)
    a11, a12, a22 = a[..., 0], a[..., 1], a[..., 2]
    m11, m12, m22 = m[..., 0], m[..., 1], m[..., 2]
    # a m: rows (a11 m11 + a12 m12, a11 m12 + a12 m22), (a12 m11 + a22 m12, a12 m12 + a22 m22)
    p11 = a11 * m11 + a12 * m12
    p12 = a11 * m12 + a12 * m22
    p21 = a12 * m11 + a22 * m12
    p22 = a12 * m12 + a22 * m22
    return np.stack([p11 * a11 + p12 * a12, p11 * a12 + p12 * a22, p21 * a12 + p22 * a22], axis=-1)


def sym_matvec(m, x):
    m = np.asarray(m, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.stack([m[..., 0] * x[..., 0] + m[..., 1] * x[..., 1],
                     m[..., 1] * x[..., 0] + m[..., 2] * x[..., 1]], axis=-1)


def sym_quad(m, x, y=None):
    """``(m x, y)`` with ``y = x`` by default."""
    y = x if y is None else y
    return np.sum(sym_matvec(m, x) * np.asarray(y, dtype=float), axis=-1)


def sym_from_frame(phi, lam_a, lam_b):
    """Packed ``lam_a a a^T + lam_b b b^T`` with ``a = (cos phi, sin phi)``."""
    c, s = np.cos(phi), np.sin(phi)
    lam_a = np.asarray(lam_a, dtype=float)
    lam_b = np.asarray(lam_b, dtype=float)
    return np.stack([lam_a * c * c + lam_b * s * s,
                     (lam_a - lam_b) * c * s,
                     lam_a * s * s + lam_b * c * c], axis=-1)


def pair_char_arrays(v, w):
    """Vectorised ``lambda_max(v w)`` for packed PD arrays.

    Uses ``M = v^{1/2} w v^{1/2}`` and ``tr/2 + hypot(...)``; the textbook
    ``t/2 + sqrt(t^2/4 - det)`` loses half the digits when ``v w`` is close to
    a multiple of the identity.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    m = sym_congruence(w, sym_sqrt(v))
    return 0.5 * (m[..., 0] + m[..., 2]) + np.hypot(0.5 * (m[..., 0] - m[..., 2]), m[..., 1])


# ---------------------------------------------------------------------------
# public scalar operations

def a2_pair_char(v: SymMat2, w: SymMat2) -> float:
    """``||v^{1/2} w^{1/2}||^2``, the largest eigenvalue of ``w^{1/2} v w^{1/2}``.

    The eigenvalues of ``w^{1/2} v w^{1/2}`` coincide with those of ``v w``,
    so the largest root of ``l^2 - tr(vw) l + det(v) det(w)`` is returned.
    """
    _require_pd(v, "v")
    _require_pd(w, "w")
    return float(pair_char_arrays(v.packed, w.packed))


def loewner_leq(a: SymMat2, b: SymMat2, tol: float = 1e-12) -> bool:
    """True iff ``b - a`` is PSD, up to ``-tol`` times the larger norm."""
    lo, _ = sym_eigvals((b - a).packed)
    scale = max(abs(a.eigvals()[0]), abs(b.eigvals()[0]), abs(a.eigvals()[1]),
                abs(b.eigvals()[1]), 1e-300)
    return bool(lo >= -tol * scale)


def terminal_children(w: SymMat2, v: SymMat2, tol: float = 1e-12) -> tuple[SymMat2, SymMat2]:
    """Split averages ``(w, v)`` into two constant children.

    Returns ``(W_plus, W_minus) = w^{1/2}(I +- D)w^{1/2}`` with
    ``D = (I - (w^{1/2} v w^{1/2})^{-1})^{1/2}``.  Then
    ``(W_plus + W_minus)/2 = w`` and ``(W_plus^{-1} + W_minus^{-1})/2 = v``.
    Requires ``v^{-1} <= w``, i.e. ``D^2 >= 0``.
    """
    _require_pd(w, "w")
    _require_pd(v, "v")
    rw = sym_sqrt(w.packed)
    m = sym_congruence(v.packed, rw)
    minv = sym_inv(m)
    d2 = np.array([1.0 - minv[0], -minv[1], 1.0 - minv[2]])
    lo, hi = sym_eigvals(d2)
    if lo < -tol * max(1.0, abs(hi)):
        raise DomainError(
            f"I - (w^1/2 v w^1/2)^-1 has negative eigenvalue {float(lo):.3e}; need v^-1 <= w")
    if lo < 0:
        # clamp rounding noise in the PSD cone
        d2 = d2 + np.array([-lo, 0.0, -lo])
    d = sym_sqrt(d2)
    eye = np.array([1.0, 0.0, 1.0])
    wp = sym_congruence(eye + d, rw)
    wm = sym_congruence(eye - d, rw)
    return SymMat2.from_array(wp), SymMat2.from_array(wm)


# ---------------------------------------------------------------------------
# spectral representation with extended exponent range

def _mpf(x):
    return x if isinstance(x, mpmath.mpf) else mpmath.mpf(x)


@dataclass(frozen=True)
class Spectral2:
    """``lam_a a a^T + lam_b b b^T`` with ``a = (cos phi, sin phi)``, ``b = a`` rotated by +90deg."""

    phi: float
    lam_a: mpmath.mpf
    lam_b: mpmath.mpf

    def __post_init__(self):
        object.__setattr__(self, "lam_a", _mpf(self.lam_a))
        object.__setattr__(self, "lam_b", _mpf(self.lam_b))
        if not (self.lam_a > 0 and self.lam_b > 0):
            raise DomainError(f"eigenvalues must be positive: {self.lam_a}, {self.lam_b}")

    @property
    def a(self) -> np.ndarray:
        return np.array([math.cos(self.phi), math.sin(self.phi)])

    @property
    def b(self) -> np.ndarray:
        return np.array([-math.sin(self.phi), math.cos(self.phi)])

    def to_sym(self) -> SymMat2:
        return SymMat2.from_array(sym_from_frame(self.phi, float(self.lam_a), float(self.lam_b)))

    @classmethod
    def from_sym(cls, m: SymMat2) -> "Spectral2":
        _require_pd(m, "matrix")
        phi = 0.5 * math.atan2(2 * m.a12, m.a11 - m.a22)
        c, s = math.cos(phi), math.sin(phi)
        lam_a = m.a11 * c * c + 2 * m.a12 * c * s + m.a22 * s * s
        lam_b = m.a11 * s * s - 2 * m.a12 * c * s + m.a22 * c * c
        if lam_b <= 0:
            # keep the exact product for the small eigenvalue
            lam_b = m.det / lam_a
        return cls(phi, lam_a, lam_b)

    def inverse(self) -> "Spectral2":
        return Spectral2(self.phi, 1 / self.lam_a, 1 / self.lam_b)

    def rotated(self, angle: float) -> "Spectral2":
        return Spectral2(self.phi + angle, self.lam_a, self.lam_b)

    def scaled(self, c) -> "Spectral2":
        return Spectral2(self.phi, self.lam_a * c, self.lam_b * c)

    def in_frame(self, phi: float):
        """Entries ``(m11, m12, m22)`` as ``mpf`` in the frame of angle ``phi``."""
        t = mpmath.mpf(self.phi - phi)
        c, s = mpmath.cos(t), mpmath.sin(t)
        return (self.lam_a * c * c + self.lam_b * s * s,
                (self.lam_a - self.lam_b) * c * s,
                self.lam_a * s * s + self.lam_b * c * c)


def spectral_pair_char(v: Spectral2, w: Spectral2) -> mpmath.mpf:
    """``lambda_max(v w)`` without cancellation for arbitrarily eccentric inputs.

    In the frame of ``v`` the matrix ``v^{1/2} w v^{1/2}`` has nonnegative
    diagonal entries built from positive terms, and its top eigenvalue is
    ``tr/2 + hypot(diff/2, offdiag)``.
    """
    t = mpmath.mpf(w.phi - v.phi)
    c, s = mpmath.cos(t), mpmath.sin(t)
    w11 = w.lam_a * c * c + w.lam_b * s * s
    w22 = w.lam_a * s * s + w.lam_b * c * c
    w12 = (w.lam_a - w.lam_b) * c * s
    m11, m22 = v.lam_a * w11, v.lam_b * w22
    m12 = mpmath.sqrt(v.lam_a * v.lam_b) * w12
    return (m11 + m22) / 2 + mpmath.hypot((m11 - m22) / 2, m12)


def spectral_mismatch(ref: Spectral2, other) -> mpmath.mpf:
    """Relative distance of ``other`` from ``ref`` measured in ``ref``'s frame.

    ``other`` is an entry triple in the frame of ``ref``.  The difference is
    rescaled by ``diag(ref)^{-1/2}`` on both sides, so each eigendirection is
    compared on its own scale.
    """
    d11 = (other[0] - ref.lam_a) / ref.lam_a
    d22 = (other[2] - ref.lam_b) / ref.lam_b
    d12 = other[1] / mpmath.sqrt(ref.lam_a * ref.lam_b)
    return max(abs(d11), abs(d22), abs(d12))


def spectral_terminal_children(w: Spectral2, v: Spectral2) -> tuple[Spectral2, Spectral2]:
    """``terminal_children`` for commuting averages sharing one frame.

    Both ``w`` and ``v`` must be diagonal in the same frame; then ``D`` is
    diagonal too and each axis is split independently:
    ``w_i (1 +- sqrt(1 - 1/(w_i v_i)))``.
    """
    if abs(w.phi - v.phi) > 1e-15 * max(1.0, abs(w.phi)):
        raise DomainError("spectral terminal split needs a shared frame")
    pa = w.lam_a * v.lam_a
    pb = w.lam_b * v.lam_b
    for name, p in (("a", pa), ("b", pb)):
        if p < 1:
            raise DomainError(f"axis {name}: w*v = {mpmath.nstr(p, 12)} < 1, need v^-1 <= w")
    da = mpmath.sqrt(1 - 1 / pa)
    db = mpmath.sqrt(1 - 1 / pb)
    plus = Spectral2(w.phi, w.lam_a * (1 + da), w.lam_b * (1 + db))
    minus = Spectral2(w.phi, w.lam_a * (1 - da), w.lam_b * (1 - db))
    return plus, minus
