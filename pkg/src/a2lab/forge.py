"""The stopping-tree weight family: rotation and stretching steps, eigenvalue
tables, the symbolic ``WeightModel`` and its dyadic A2 characteristic.

Layout of one generation.  A stopping interval ``I`` of generation ``n`` sits
at dyadic level ``2n``.  Its children ``I+-`` (level ``2n+1``) carry the
rotated averages.  Each ``J = I+-`` is stretched: the right child ``J+`` is a
stopping interval of generation ``n+1`` and the left child ``J-`` is terminal,
split once more into two constant cells.  Stopping intervals of the last
generation ``n_max`` are closed directly by a terminal split, so the leaf
depth is ``2 n_max + 1``.

Everything is stored per generation: all stopping intervals of one generation
are congruent up to a rotation of the frame, so checks and sums run over
``n_max`` rows instead of ``2**n_max`` nodes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Iterator

import mpmath
import numpy as np

from .dyadic import DyadicInterval, PiecewiseFn, UNIT
from .mat2 import (DomainError, Spectral2, spectral_mismatch, spectral_pair_char,
                   spectral_terminal_children, sym_from_frame)

mpf = mpmath.mpf

S_SLACK = 1e-12  # rounding allowance on the upper end of s <= 1


class ConstructionError(DomainError):
    """A rotation or stretch precondition failed while building a model."""


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class ConstructionParams:
    Q: float
    delta0: float
    n_max: int
    q: float = 0.1
    convention: str = "symmetric"  # or "alpha0-fixed"
    c: float = 1.0                 # alpha0# / alpha0 for the asymmetric seed
    rotate: bool = True            # False: keep the seed but skip every rotation

    def __post_init__(self):
        if self.rotate and not self.Q > 2:
            raise DomainError(f"Q must exceed 2, got {self.Q}")
        if not self.Q >= 1:
            raise DomainError(f"Q must be at least 1, got {self.Q}")
        if not 0 < self.delta0 <= 0.1:
            raise DomainError(f"delta0 must lie in (0, 0.1], got {self.delta0}")
        if self.n_max < 0:
            raise DomainError("n_max must be nonnegative")
        if self.convention not in ("symmetric", "alpha0-fixed"):
            raise DomainError(f"unknown seed convention {self.convention!r}")
        if self.convention == "symmetric" and self.c != 1.0:
            raise DomainError("the symmetric seed has c = 1")
        if self.c <= 0:
            raise DomainError("c must be positive")

    @property
    def r(self) -> float:
        return 2.0 - 1.0 / self.Q

    def without_rotation(self) -> "ConstructionParams":
        return replace(self, rotate=False)

    def seed(self) -> tuple[mpf, mpf, mpf, mpf]:
        """``(alpha0, beta0, alpha0#, beta0#)`` with ``delta0 = q (beta0/alpha0)^{1/2}``."""
        Q, q, d0 = mpf(self.Q), mpf(self.q), mpf(self.delta0)
        if self.convention == "symmetric":
            a = q / d0 * mpmath.sqrt(Q)
            b = d0 / q * mpmath.sqrt(Q)
            return a, b, a, b
        c = mpf(self.c)
        a = q * mpmath.sqrt(Q) / (d0 * mpmath.sqrt(c))
        a_s = c * a
        return a, Q / a_s, a_s, Q / a


def default_delta0(Q: float) -> float:
    return min(1e-3, 0.05 / math.sqrt(Q))


def default_nmax(Q: float) -> int:
    return int(math.ceil(16 * Q))


# ---------------------------------------------------------------------------
# primitive steps

def rotation_step(v: Spectral2, w: Spectral2, q: float):
    """Rotate the common frame of ``v = <W^-1>`` and ``w = <W>`` by ``+-arctan(delta)``.

    ``v = alpha aa* + beta bb*`` and ``w = beta# aa* + alpha# bb*`` with
    ``alpha > beta``; ``delta = q (beta/alpha)^{1/2}``.  Returns
    ``(v+, v-, w+, w-)`` whose midpoints are ``v`` and ``w``.
    """
    if abs(v.phi - w.phi) > 1e-15 * max(1.0, abs(v.phi)):
        raise DomainError("rotation needs v and w in one frame")
    alpha, beta = v.lam_a, v.lam_b
    beta_s, alpha_s = w.lam_a, w.lam_b
    if not alpha > beta:
        raise DomainError("rotation needs alpha > beta")
    d2 = mpf(q) ** 2 * beta / alpha
    if d2 >= beta / alpha or d2 * alpha_s >= beta_s:
        raise DomainError("rotation would produce nonpositive eigenvalue")
    ta, tb, tas, tbs = _tilde(alpha, beta, alpha_s, beta_s, d2)
    theta = float(mpmath.atan(mpmath.sqrt(d2)))
    out = []
    for sgn in (1, -1):
        out.append(Spectral2(v.phi + sgn * theta, ta, tb))
    for sgn in (1, -1):
        out.append(Spectral2(w.phi + sgn * theta, tbs, tas))
    return tuple(out)


def _tilde(alpha, beta, alpha_s, beta_s, d2):
    den = 1 - d2
    return ((alpha - d2 * beta) / den, (beta - d2 * alpha) / den,
            (alpha_s - d2 * beta_s) / den, (beta_s - d2 * alpha_s) / den)


def stretch_step(x, y, s, Q):
    """One-axis stretch with ``r = 2 - 1/Q``.

    ``x+ = r x``, ``y+ = y/(s r)`` (so ``x+ y+ = Q``) and
    ``x- = (2 - r) x``, ``y- = (2 - 1/(s r)) y`` (so ``1 <= x- y- <= 2``).
    """
    if not (0.9 <= s <= 1 + S_SLACK):
        raise DomainError(f"stretch parameter s = {float(s):.6g} outside [0.9, 1]")
    if not (x > 0 and y > 0):
        raise DomainError("stretch needs positive x, y")
    if Q < 1:
        raise DomainError("stretch needs Q >= 1")
    if abs(x * y / (s * Q) - 1) > 1e-9:
        raise DomainError(f"stretch needs x y = s Q, got x y / (s Q) = {float(x * y / (s * Q))}")
    r = 2 - 1 / Q
    return (r * x, y / (s * r)), ((2 - r) * x, (2 - 1 / (s * r)) * y)


# ---------------------------------------------------------------------------
# eigenvalue table

COLUMNS = ("alpha", "beta", "alpha_s", "beta_s", "t_alpha", "t_beta", "t_alpha_s",
           "t_beta_s", "delta", "theta", "s", "t", "t_tilde")


@dataclass
class EigenTable:
    """Per-generation eigenvalues, all ``mpf``; row ``n`` for ``n = 0..n_max``.

    The rotation columns of the last row describe the rotation that would come
    next; the final generation is closed without it.
    """

    Q: mpf
    q: mpf
    rows: list[dict]

    def __len__(self) -> int:
        return len(self.rows)

    def col(self, name: str) -> list:
        return [row[name] for row in self.rows]

    def __getitem__(self, n: int) -> dict:
        return self.rows[n]

    def scaled(self, name: str, pow2_per_gen: float = 0.0, n0: int = 0) -> np.ndarray:
        """Floats ``col[n] * 2**(pow2_per_gen * n)``; keeps huge columns in range."""
        out = np.empty(len(self.rows))
        for n, row in enumerate(self.rows):
            out[n] = float(mpmath.ldexp(row[name], int(round(pow2_per_gen * n))))
        return out

    def log(self, name: str) -> np.ndarray:
        return np.array([float(mpmath.log(row[name])) for row in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(("n",) + COLUMNS)
        for n, row in enumerate(self.rows):
            wr.writerow([n] + [mpmath.nstr(row[c], 17) for c in COLUMNS])
        return buf.getvalue()


def build_table(params: ConstructionParams) -> EigenTable:
    Q, q = mpf(params.Q), mpf(params.q)
    r = 2 - 1 / Q
    alpha, beta, alpha_s, beta_s = params.seed()
    rows = []
    for n in range(params.n_max + 1):
        if params.rotate:
            d2 = q * q * beta / alpha
            if not alpha > beta or d2 * alpha_s >= beta_s:
                raise ConstructionError(f"generation {n}: rotation precondition fails")
        else:
            d2 = mpf(0)
        ta, tb, tas, tbs = _tilde(alpha, beta, alpha_s, beta_s, d2)
        if min(ta, tb, tas, tbs) <= 0:
            raise ConstructionError(f"generation {n}: rotation would produce nonpositive eigenvalue")
        delta = mpmath.sqrt(d2)
        s = ta * tbs / Q
        m = delta * (tas - tbs) / (1 + d2)
        rows.append(dict(alpha=alpha, beta=beta, alpha_s=alpha_s, beta_s=beta_s,
                         t_alpha=ta, t_beta=tb, t_alpha_s=tas, t_beta_s=tbs,
                         delta=delta, theta=mpmath.atan(delta), s=s,
                         t=m * alpha, t_tilde=q * mpmath.sqrt(Q * alpha_s * alpha)))
        if n == params.n_max:
            break
        if not (mpf("0.9") <= s <= 1 + S_SLACK):
            raise ConstructionError(f"generation {n}: stretch parameter s = {mpmath.nstr(s, 8)} outside [0.9, 1]")
        alpha, beta_s = r * ta, tbs / (s * r)
        alpha_s, beta = r * tas, tb / (s * r)
    return EigenTable(Q, q, rows)


# ---------------------------------------------------------------------------
# the model

@dataclass(frozen=True)
class Node:
    kind: str               # stopping | rotated | terminal | leaf
    interval: DyadicInterval
    generation: int
    phi: float
    V: Spectral2            # <W^-1>
    W: Spectral2            # <W>


class WeightModel:
    """Symbolic stopping tree for one ``ConstructionParams``."""

    def __init__(self, params: ConstructionParams, table: EigenTable | None = None):
        self.params = params
        self.table = build_table(params) if table is None else table
        self.thetas = [float(row["theta"]) for row in self.table.rows]

    @property
    def n_max(self) -> int:
        return self.params.n_max

    @property
    def leaf_depth(self) -> int:
        return 2 * self.n_max + 1

    # --- per-generation averages in a given frame -------------------------
    def stopping_avg(self, n: int, phi: float = 0.0) -> tuple[Spectral2, Spectral2]:
        row = self.table[n]
        return (Spectral2(phi, row["alpha"], row["beta"]),
                Spectral2(phi, row["beta_s"], row["alpha_s"]))

    def rotated_avg(self, n: int, phi: float = 0.0) -> tuple[Spectral2, Spectral2]:
        """Averages on ``I+-`` expressed in that child's own frame ``phi``."""
        row = self.table[n]
        return (Spectral2(phi, row["t_alpha"], row["t_beta"]),
                Spectral2(phi, row["t_beta_s"], row["t_alpha_s"]))

    def terminal_avg(self, n: int, phi: float = 0.0) -> tuple[Spectral2, Spectral2]:
        """Averages on the terminal left child of a rotated interval of generation ``n``."""
        row, Q = self.table[n], self.table.Q
        r = 2 - 1 / Q
        sr = row["s"] * r
        return (Spectral2(phi, (2 - r) * row["t_alpha"], (2 - 1 / sr) * row["t_beta"]),
                Spectral2(phi, (2 - 1 / sr) * row["t_beta_s"], (2 - r) * row["t_alpha_s"]))

    def stopping_children(self, n: int, phi: float = 0.0):
        """Child averages of a stopping interval: ``[(V, W) of I-, (V, W) of I+]``,
        or the terminal split when ``n = n_max``."""
        if n == self.n_max:
            V, W = self.stopping_avg(n, phi)
            wp, wm = spectral_terminal_children(W, V)
            return [(wm.inverse(), wm), (wp.inverse(), wp)]
        th = self.thetas[n] if self.params.rotate else 0.0
        return [self.rotated_avg(n, phi - th), self.rotated_avg(n, phi + th)]

    def rotated_children(self, n: int, phi: float = 0.0):
        """``[(V, W) of J- (terminal), (V, W) of J+ (stopping, generation n+1)]``."""
        return [self.terminal_avg(n, phi), self.stopping_avg(n + 1, phi)]

    def terminal_children(self, n: int, phi: float = 0.0):
        V, W = self.terminal_avg(n, phi)
        wp, wm = spectral_terminal_children(W, V)
        return [(wm.inverse(), wm), (wp.inverse(), wp)]

    # --- addressing ------------------------------------------------------
    def stopping_interval(self, path) -> DyadicInterval:
        j = 0
        for eps in path:
            j = 4 * j + (2 if eps > 0 else 0) + 1
        return DyadicInterval(2 * len(path), j)

    def node(self, path) -> Node:
        """Stopping node reached by the sign path ``(+-1, ...)`` from the root."""
        path = tuple(path)
        n = len(path)
        if n > self.n_max:
            raise DomainError(f"path of length {n} exceeds n_max = {self.n_max}")
        phi = self.path_angle(path)
        V, W = self.stopping_avg(n, phi)
        return Node("stopping", self.stopping_interval(path), n, phi, V, W)

    def path_angle(self, path) -> float:
        if not self.params.rotate:
            return 0.0
        return float(sum((1 if e > 0 else -1) * self.thetas[j] for j, e in enumerate(path)))

    def stopping_angles(self, n: int) -> np.ndarray:
        """Frame angles of all ``2**n`` stopping intervals of generation ``n``, in
        left-to-right order."""
        phis = np.zeros(1)
        for j in range(n):
            th = self.thetas[j] if self.params.rotate else 0.0
            phis = np.stack([phis - th, phis + th], axis=1).reshape(-1)
        return phis

    def stopping_nodes(self, n: int) -> Iterator[Node]:
        phis = self.stopping_angles(n)
        for j, phi in enumerate(phis):
            path = [1 if (j >> (n - 1 - b)) & 1 else -1 for b in range(n)]
            V, W = self.stopping_avg(n, float(phi))
            yield Node("stopping", self.stopping_interval(path), n, float(phi), V, W)

    # --- verification ----------------------------------------------------
    def generation_checks(self) -> dict:
        """Worst relative errors over all generations for every structural identity."""
        Q = self.table.Q
        worst = dict(martingale=mpf(0), product=mpf(0), c_ratio=mpf(0), s_min=mpf(1),
                     s_max=mpf(0), delta_ratio=mpf(0), alpha_growth=mpf(0), beta_decay=mpf(0),
                     lmi=mpf(0), angle_ratio=mpf(0), terminal_a2=mpf(0))
        c = self.table[0]["alpha_s"] / self.table[0]["alpha"]
        r = 2 - 1 / Q
        rows = self.table.rows
        for n, row in enumerate(rows):
            worst["product"] = max(worst["product"], abs(row["alpha"] * row["beta_s"] / Q - 1),
                                   abs(row["alpha_s"] * row["beta"] / Q - 1))
            worst["c_ratio"] = max(worst["c_ratio"], abs(row["alpha_s"] / (c * row["alpha"]) - 1),
                                   abs(row["beta_s"] / (c * row["beta"]) - 1))
            # <W^-1>_I <= Q <W>_I^-1 and <W>_I^-1 <= <W^-1>_I, per axis in the common frame
            for a, b in ((row["alpha"], row["beta_s"]), (row["beta"], row["alpha_s"])):
                prod = a * b
                worst["lmi"] = max(worst["lmi"], prod / Q - 1, 1 - prod)
            V, W = self.stopping_avg(n)
            kids = self.stopping_children(n)
            worst["martingale"] = max(worst["martingale"], _midpoint_error(V, W, kids))
            if n < self.n_max:
                worst["s_min"] = min(worst["s_min"], row["s"])
                worst["s_max"] = max(worst["s_max"], row["s"])
                nxt = rows[n + 1]
                if self.params.rotate:
                    worst["delta_ratio"] = max(worst["delta_ratio"], nxt["delta"] * r / row["delta"])
                worst["alpha_growth"] = max(worst["alpha_growth"], r * row["alpha"] / nxt["alpha"])
                worst["beta_decay"] = max(worst["beta_decay"], nxt["beta"] * r / row["beta"])
                Vr, Wr = self.rotated_avg(n)
                worst["martingale"] = max(worst["martingale"],
                                          _midpoint_error(Vr, Wr, self.rotated_children(n)))
                Vt, Wt = self.terminal_avg(n)
                worst["martingale"] = max(worst["martingale"],
                                          _midpoint_error(Vt, Wt, self.terminal_children(n)))
                worst["terminal_a2"] = max(worst["terminal_a2"], spectral_pair_char(Vt, Wt))
                if self.params.rotate:
                    tail = sum(rows[j]["theta"] for j in range(n, self.n_max))
                    worst["angle_ratio"] = max(worst["angle_ratio"], tail / (3 * row["theta"]))
        return {k: float(v) for k, v in worst.items()}

    def node_a2_values(self) -> dict:
        """A2 pair characteristic of each node type, maximised over generations."""
        out = dict(stopping=mpf(0), rotated=mpf(0), terminal=mpf(0), leaf=mpf(0))
        for n in range(self.n_max + 1):
            out["stopping"] = max(out["stopping"], spectral_pair_char(*self.stopping_avg(n)))
            kids = (self.stopping_children(n) if n == self.n_max else
                    self.terminal_children(n) if n < self.n_max else [])
            for V, W in kids:
                out["leaf"] = max(out["leaf"], spectral_pair_char(V, W))
            if n < self.n_max:
                out["rotated"] = max(out["rotated"], spectral_pair_char(*self.rotated_avg(n)))
                out["terminal"] = max(out["terminal"], spectral_pair_char(*self.terminal_avg(n)))
        return {k: float(v) for k, v in out.items()}

    def dyadic_A2(self) -> float:
        """Maximum A2 pair characteristic over every node of the tree.

        All nodes of one kind and generation are rotations of each other and
        the characteristic is rotation invariant, so one representative per
        (kind, generation) suffices.
        """
        return max(self.node_a2_values().values())

    # --- materialization -------------------------------------------------
    def materialize(self, depth_cap: int = 24) -> tuple[PiecewiseFn, PiecewiseFn]:
        """Leaf values of ``(W, V)`` as packed symmetric arrays on ``[0,1)``."""
        D = self.leaf_depth
        if D > depth_cap:
            raise DomainError(f"leaf depth {D} exceeds cap {depth_cap}")
        Wv = np.empty((2 ** D, 3))
        Vv = np.empty((2 ** D, 3))
        for n in range(self.n_max + 1):
            phis = self.stopping_angles(n)
            level = 2 * n
            idx = self._stopping_indices(n)
            if n == self.n_max:
                leaves = [(level + 1, 2 * idx + e, phis, kid) for e, kid in
                          enumerate(self.stopping_children(n))]
            else:
                th = self.thetas[n] if self.params.rotate else 0.0
                leaves = []
                for e, sgn in ((0, -1), (1, 1)):
                    rot_idx = 2 * idx + e
                    for f, kid in enumerate(self.terminal_children(n)):
                        leaves.append((level + 3, 4 * rot_idx + f, phis + sgn * th, kid))
            for lev, cells, ph, (V, W) in leaves:
                span = 2 ** (D - lev)
                wv = sym_from_frame(ph, float(W.lam_a), float(W.lam_b))
                vv = sym_from_frame(ph, float(V.lam_a), float(V.lam_b))
                Wv.reshape(2 ** lev, span, 3)[cells] = wv[:, None, :]
                Vv.reshape(2 ** lev, span, 3)[cells] = vv[:, None, :]
        return PiecewiseFn(D, UNIT, Wv), PiecewiseFn(D, UNIT, Vv)

    def _stopping_indices(self, n: int) -> np.ndarray:
        idx = np.zeros(1, dtype=np.int64)
        for _ in range(n):
            idx = np.stack([4 * idx + 1, 4 * idx + 3], axis=1).reshape(-1)
        return idx

    def summary_csv(self) -> str:
        return self.table.to_csv()


def _midpoint_error(V: Spectral2, W: Spectral2, kids) -> mpf:
    """Mismatch between parent averages and the mean of the two child averages."""
    err = mpf(0)
    for which, ref in ((0, V), (1, W)):
        a = [kid[which].in_frame(ref.phi) for kid in kids]
        mean = tuple((a[0][i] + a[1][i]) / 2 for i in range(3))
        err = max(err, spectral_mismatch(ref, mean))
    return err


def build_weight(params: ConstructionParams) -> WeightModel:
    return WeightModel(params)
