"""Weighted norm of the sparse paraproduct on the witness ``f = 1_{I0} W^{-1} b``.

``||Pi f||^2_{L2(W)} = D + 2 OFF`` where ``D`` collects the diagonal terms
``(<W>_I <V>_I b, <V>_I b)|I|`` and ``OFF`` the signed cross terms
``+-(<V>_I b, <W hat h_J>_J <V>_J b)|J|`` over stopping pairs ``J`` strictly
inside ``I`` (``+`` when ``J`` lies in the right half of ``I``).  Here
``V = W^{-1}`` and the paraproduct runs over all stopping intervals except
the root.

Two evaluators:

* ``pi_quadratic_bruteforce`` enumerates every node with float averages.
* ``pi_quadratic_fast`` uses the frame recursion documented in
  ``docs/frame_recursion.md``; it is linear in ``n_max`` for the totals and
  quadratic only for the optional per-(n, k) table.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .forge import WeightModel
from .mat2 import sym_from_frame

mpf = mpmath.mpf

PAIR_BUDGET = 2 ** 22


class BudgetError(RuntimeError):
    pass


def witness_vector(name) -> np.ndarray:
    """``a0`` or ``a0+b0`` for the root frame (angle 0); an explicit 2-vector passes through."""
    if isinstance(name, str):
        if name == "a0":
            return np.array([1.0, 0.0])
        if name in ("a0+b0", "a0b0"):
            return np.array([1.0, 1.0])
        raise ValueError(f"unknown witness {name!r}")
    return np.asarray(name, dtype=float)


@dataclass
class QuadraticFormReport:
    Q: float
    delta0: float
    n_max: int
    method: str
    diagonal: float
    offdiag: float
    f_norm2: float
    per_generation: np.ndarray = field(repr=False, default=None)   # diagonal part per n
    pairs: np.ndarray | None = field(repr=False, default=None)      # [n, k] off-diagonal sums
    runtime_ms: float = 0.0

    @property
    def total(self) -> float:
        return self.diagonal + 2 * self.offdiag

    @property
    def ratio(self) -> float:
        """``||Pi f||_{L2(W)} / ||f||_{L2(W)}``."""
        return float(np.sqrt(self.total / self.f_norm2))

    @property
    def diagonal_ratio(self) -> float:
        return float(np.sqrt(self.diagonal / self.f_norm2))

    def csv_row(self) -> dict:
        return dict(Q=self.Q, delta0=self.delta0, n_max=self.n_max, method=self.method,
                    diagonal=self.diagonal, offdiag=self.offdiag, total=self.total,
                    runtime_ms=round(self.runtime_ms, 3))


def f_norm2(model: WeightModel, b) -> float:
    """``||1_{I0} W^{-1} b||^2_{L2(W)} = (<W^-1>_{I0} b, b)``."""
    b = witness_vector(b)
    row = model.table[0]
    return float(row["alpha"]) * b[0] ** 2 + float(row["beta"]) * b[1] ** 2


# ---------------------------------------------------------------------------
# brute force

def _node_arrays(model: WeightModel, n: int):
    """Packed ``<V>``, ``<W>`` and ``<W hat h>`` for all stopping intervals of generation ``n``."""
    phis = model.stopping_angles(n)
    row = model.table[n]
    V = sym_from_frame(phis, float(row["alpha"]), float(row["beta"]))
    W = sym_from_frame(phis, float(row["beta_s"]), float(row["alpha_s"]))
    (Vm, Wm), (Vp, Wp) = model.stopping_children(n, 0.0)
    wp = sym_from_frame(phis + Wp.phi, float(Wp.lam_a), float(Wp.lam_b))
    wm = sym_from_frame(phis + Wm.phi, float(Wm.lam_a), float(Wm.lam_b))
    return V, W, 0.5 * (wp - wm)


def _full(m):
    return np.stack([np.stack([m[..., 0], m[..., 1]], -1), np.stack([m[..., 1], m[..., 2]], -1)], -2)


def pi_quadratic_bruteforce(model: WeightModel, b="a0", budget: int = PAIR_BUDGET) -> QuadraticFormReport:
    """Enumerate every stopping pair ``J subset I`` with averages taken node by node."""
    t0 = time.perf_counter()
    b = witness_vector(b)
    N = model.n_max
    pairs_count = sum(2 ** k * (k - 1) for k in range(1, N + 1))
    if pairs_count > budget:
        raise BudgetError(f"{pairs_count} stopping pairs exceed the budget {budget}; "
                          "use pi_quadratic_fast")
    xs, ys = {}, {}
    diag = np.zeros(N + 1)
    for n in range(1, N + 1):
        V, W, Wh = _node_arrays(model, n)
        Vb = np.einsum("...ij,j->...i", _full(V), b)
        size = 4.0 ** -n
        diag[n] = size * np.einsum("...i,...ij,...j->...", Vb, _full(W), Vb).sum()
        xs[n] = Vb
        ys[n] = np.einsum("...ij,...j->...i", _full(Wh), Vb) * size
    pairs = np.zeros((N + 1, N + 1))
    for k in range(2, N + 1):
        yk = ys[k]
        idx = np.arange(2 ** k)
        for n in range(1, k):
            anc = idx >> (k - n)
            sign = np.where((idx >> (k - n - 1)) & 1, 1.0, -1.0)
            pairs[n, k] = np.sum(sign * np.einsum("...i,...i->...", xs[n][anc], yk))
    return QuadraticFormReport(model.params.Q, model.params.delta0, N, "brute",
                               float(diag.sum()), float(pairs.sum()), f_norm2(model, b),
                               per_generation=diag, pairs=pairs,
                               runtime_ms=1e3 * (time.perf_counter() - t0))


# ---------------------------------------------------------------------------
# frame recursion

def _spin_parts(x11, x12, x21, x22):
    """``X = x0 I + x1 J + P(z)`` with ``J = [[0,-1],[1,0]]`` and ``P(z) = [[Re z, Im z],[Im z, -Re z]]``."""
    x0 = (x11 + x22) / 2
    x1 = (x21 - x12) / 2
    z = mpmath.mpc((x11 - x22) / 2, (x12 + x21) / 2)
    return x0, x1, z


def _from_spin(x0, x1, z):
    return ((x0 + z.real, -x1 + z.imag), (x1 + z.imag, x0 - z.real))


def _mul(A, B):
    return tuple(tuple(A[i][0] * B[0][j] + A[i][1] * B[1][j] for j in range(2)) for i in range(2))


def _T(A):
    return ((A[0][0], A[1][0]), (A[0][1], A[1][1]))


def _diag(a, b):
    return ((a, mpf(0)), (mpf(0), b))


def _swap(m):
    """``m (a b^T + b a^T)`` in frame coordinates."""
    return ((mpf(0), m), (m, mpf(0)))


def _scale(c, A):
    return tuple(tuple(c * x for x in row) for row in A)


def _trace_with(A, E):
    """``tr(A E)`` for a full ``A`` and symmetric ``E = (e11, e12, e22)``."""
    return A[0][0] * E[0] + (A[0][1] + A[1][0]) * E[1] + A[1][1] * E[2]


def _trace_LPE(L, z, E):
    """``tr(diag(L) P(z) E)`` for symmetric ``E = (e11, e12, e22)``."""
    return _trace_with(_mul(_diag(*L), _from_spin(mpf(0), mpf(0), z)), E)


def _moments(model: WeightModel, b: np.ndarray):
    """``E_n[u u^T]`` for ``u`` = witness in the frame of a random stopping interval of
    generation ``n``; returned as packed mpf triples for ``n = 0..n_max``."""
    bb = mpf(float(b @ b))
    psi = mpmath.mpf(float(np.arctan2(b[1], b[0])))
    rot = mpmath.expj(2 * psi)
    out = []
    prod = mpf(1)
    for n in range(model.n_max + 1):
        w = rot * prod
        out.append((bb / 2 * (1 + w.real), bb / 2 * w.imag, bb / 2 * (1 - w.real)))
        if model.params.rotate:
            prod *= mpmath.cos(2 * model.table[n]["theta"])
    return out


class FrameSums:
    """Generation-level matrices of one model and the sums built from them.

    Every matrix is given in the frame of its own stopping interval, indexed
    by generation.  For ``I`` in generation ``n``:

    * ``V[n]``, ``W[n]``: ``<W^-1>_I`` and ``<W>_I``;
    * ``Wh[n]``, ``Vh[n]``: ``<W hat h_I>_I`` and ``<W^-1 hat h_I>_I``;
    * ``VL[n]``, ``WL[n]``, ``VhL[n]``, ``WhL[n]``: the same objects on the
      terminal left sibling ``L(I)`` (generation ``n >= 1``), which shares
      ``I``'s frame.
    """

    def __init__(self, model: WeightModel, b="a0"):
        self.model = model
        self.b = witness_vector(b)
        self.E = _moments(model, self.b)
        rows = model.table.rows
        N = model.n_max
        Q = model.table.Q
        r = 2 - 1 / Q
        rot = model.params.rotate
        self.cos2 = [mpmath.cos(2 * row["theta"]) if rot else mpf(1) for row in rows]
        self.sin2 = [mpmath.sin(2 * row["theta"]) if rot else mpf(0) for row in rows]
        self.V, self.W, self.Wh, self.Vh = [], [], [], []
        self.VL, self.WL, self.VhL, self.WhL = [None], [None], [None], [None]
        delta_fin = mpmath.sqrt(1 - 1 / Q)
        for n, row in enumerate(rows):
            V = _diag(row["alpha"], row["beta"])
            W = _diag(row["beta_s"], row["alpha_s"])
            self.V.append(V)
            self.W.append(W)
            if n == N:
                self.Wh.append(_scale(delta_fin, W))
                self.Vh.append(_scale(-delta_fin, V))
            else:
                d = row["delta"] if rot else mpf(0)
                self.Wh.append(_swap(-d * (row["t_alpha_s"] - row["t_beta_s"]) / (1 + d * d)))
                self.Vh.append(_swap(d * (row["t_alpha"] - row["t_beta"]) / (1 + d * d)))
            if n >= 1:
                p = rows[n - 1]
                sr = p["s"] * r
                va, vb = (2 - r) * p["t_alpha"], (2 - 1 / sr) * p["t_beta"]
                wa, wb = (2 - 1 / sr) * p["t_beta_s"], (2 - r) * p["t_alpha_s"]
                self.VL.append(_diag(va, vb))
                self.WL.append(_diag(wa, wb))
                da = mpmath.sqrt(1 - 1 / (va * wa))
                db = mpmath.sqrt(1 - 1 / (vb * wb))
                self.VhL.append(_diag(-da * va, -db * vb))
                self.WhL.append(_diag(da * wa, db * wb))

    @property
    def n_max(self) -> int:
        return self.model.n_max

    # -- building blocks ---------------------------------------------------
    def diagonal(self, A) -> list:
        """``sum_{I in S_n} |I| (A_n u, u)`` per generation ``n >= 1``."""
        out = [mpf(0)]
        for n in range(1, self.n_max + 1):
            out.append(mpmath.ldexp(_trace_with(A[n], self.E[n]), -n))
        return out

    def nested(self, L, G, signed: bool) -> list:
        """Per generation ``n`` of ``I``: ``sum_I sum_{J in S_<(I)} [+-] (L_I b, G_J b) |J|``.

        With ``signed`` the sign is ``+`` for ``J`` in the right half of ``I``.
        """
        N = self.n_max
        c = self.cos2
        parts = [None] + [_spin_parts(G[k][0][0], G[k][0][1], G[k][1][0], G[k][1][1])
                          for k in range(1, N + 1)]
        # scaled tails: y_m = sum_{k >= m} 2^-k prod_{m <= j < k} c_j z_k ; iso_m likewise for x0, x1
        y = [mpmath.mpc(0)] * (N + 2)
        iso0 = [mpf(0)] * (N + 2)
        iso1 = [mpf(0)] * (N + 2)
        for m in range(N, 0, -1):
            x0, x1, z = parts[m]
            y[m] = mpmath.ldexp(1, -m) * z + c[m] * y[m + 1]
            iso0[m] = mpmath.ldexp(x0, -m) + iso0[m + 1]
            iso1[m] = mpmath.ldexp(x1, -m) + iso1[m + 1]
        out = [mpf(0)]
        for n in range(1, N + 1):
            if signed:
                X = _from_spin(mpf(0), mpf(0), mpmath.mpc(0, 1) * self.sin2[n] * y[n + 1])
            else:
                X = _from_spin(iso0[n + 1], iso1[n + 1], self.cos2[n] * y[n + 1])
            out.append(_trace_with(_mul(_T(L[n]), X), self.E[n]))
        return out

    # -- norms of sums of Haar-type pieces ---------------------------------
    def haar_sum_norm2(self, M) -> tuple:
        """``|| sum_{I in S_<} hat h_I M_I b ||^2_{L2(W)}`` split as (diagonal, off-diagonal)."""
        N = self.n_max
        diag = self.diagonal([None] + [_mul(_T(M[n]), _mul(self.W[n], M[n])) for n in range(1, N + 1)])
        G = [None] + [_mul(self.Wh[k], M[k]) for k in range(1, N + 1)]
        off = self.nested(M, G, signed=True)
        return diag, off

    def left_sum_norm2(self, M) -> list:
        """``|| sum_{I in S_<} hat h_{L(I)} M_I b ||^2_{L2(W)}``; the supports are disjoint."""
        N = self.n_max
        return self.diagonal([None] + [_mul(_T(M[n]), _mul(self.WL[n], M[n])) for n in range(1, N + 1)])


def _total(parts) -> float:
    return float(mpmath.fsum(parts))


def generation_matrices(model: WeightModel):
    """Spin-2 part ``g_k`` of ``<W hat h_J>_J <V>_J`` in ``J``'s frame, per generation.

    For ``k < n_max`` the matrix is ``m_k [[0, beta_k], [alpha_k, 0]]`` with
    ``m_k = -delta_k (t_alpha#_k - t_beta#_k)/(1 + delta_k^2)``; the last
    generation gives a multiple of the identity and ``g = 0``.
    """
    rows = model.table.rows
    g = []
    for k, row in enumerate(rows):
        if k == model.n_max or not model.params.rotate:
            g.append(mpmath.mpc(0))
            continue
        m = -row["delta"] * (row["t_alpha_s"] - row["t_beta_s"]) / (1 + row["delta"] ** 2)
        g.append(_spin_parts(mpf(0), m * row["beta"], m * row["alpha"], mpf(0))[2])
    return g


def pi_quadratic_fast(model: WeightModel, b="a0", pairs: bool = False) -> QuadraticFormReport:
    t0 = time.perf_counter()
    fs = FrameSums(model, b)
    diag, off = fs.haar_sum_norm2(fs.V)
    table = None
    if pairs:
        table = _pair_table(model, fs.E, generation_matrices(model), fs.cos2, fs.sin2)
    return QuadraticFormReport(model.params.Q, model.params.delta0, model.n_max, "frame-recursion",
                               _total(diag), _total(off), f_norm2(model, b),
                               per_generation=np.array([float(x) for x in diag]), pairs=table,
                               runtime_ms=1e3 * (time.perf_counter() - t0))


def _pair_table(model, E, g, cos2, sin2) -> np.ndarray:
    """Off-diagonal sums per generation pair ``(n, k)`` in floats.

    ``term[n, k] = tr(L_n P(i sin 2theta_n prod_{n<j<k} cos 2theta_j 2^{-k} g_k) E_n)``;
    every factor is bounded, so doubles suffice even for thousands of generations.
    """
    N = model.n_max
    rows = model.table.rows
    gk = np.array([complex(mpmath.ldexp(1, -k) * g[k]) for k in range(N + 1)])
    logc = np.log(np.array([float(c) for c in cos2]))
    cum = np.concatenate([[0.0], np.cumsum(logc)])     # cum[j] = sum_{i<j} log c_i
    # functional w -> tr(L_n P(w) E_n) = Re(w) A_n + Im(w) B_n, scaled by sin 2theta_n
    A = np.zeros(N + 1)
    B = np.zeros(N + 1)
    for n in range(1, N):
        row = rows[n]
        L = (row["alpha"] * sin2[n], row["beta"] * sin2[n])
        A[n] = float(_trace_LPE(L, mpmath.mpc(1, 0), E[n]))
        B[n] = float(_trace_LPE(L, mpmath.mpc(0, 1), E[n]))
    n_idx = np.arange(N + 1)[:, None]
    k_idx = np.arange(N + 1)[None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        logp = cum[np.minimum(k_idx, N)] - cum[np.minimum(n_idx + 1, N)]
        w = 1j * np.exp(np.where(k_idx > n_idx, logp, 0.0)) * gk[None, :]
    table = w.real * A[:, None] + w.imag * B[:, None]
    table[~((k_idx > n_idx) & (n_idx >= 1))] = 0.0
    return table


# ---------------------------------------------------------------------------
# (Pi f, Pi* f) and the companion operators on the witness

@dataclass
class PairingReport:
    """``-(Pi f, Pi* f)_{L2(W)} = g01 + g02 + g03 + g04`` with ``Pi*`` the unweighted adjoint.

    * ``g01``: ``-sum_I (<W hat h_I><W^-1 hat h_I> b, <W^-1>_I b)|I|`` (diagonal)
    * ``g02``: ``+sum`` over ``J`` in the left half of ``I`` of ``(<W^-1>_I b, <W>_J <W^-1 hat h_J> b)|J|``
    * ``g03``: ``-sum`` of the same over the right half
    * ``g04``: ``-sum_{J subset I} (<W^-1 hat h_I> b, <W hat h_J><W^-1>_J b)|J|``
    """
    Q: float
    n_max: int
    g01: float
    g02: float
    g03: float
    g04: float
    pi_norm2: float
    pistar_norm2: float
    f_norm2: float
    diagonal_factors: list = field(repr=False, default=None)   # kappa_n with <W h><W^-1 h> = kappa_n Id

    @property
    def pairing(self) -> float:
        return -(self.g01 + self.g02 + self.g03 + self.g04)

    @property
    def diff_norm2(self) -> float:
        """``||(Pi - Pi*) f||^2_{L2(W)}``."""
        return self.pi_norm2 - 2 * self.pairing + self.pistar_norm2

    def signs(self) -> dict:
        return {k: int(np.sign(getattr(self, k))) for k in ("g01", "g02", "g03", "g04", "pairing")}


def pi_pistar_pairing(model: WeightModel, b="a0") -> PairingReport:
    fs = FrameSums(model, b)
    N = fs.n_max
    rng_ = range(1, N + 1)
    prod = [None] + [_mul(fs.Wh[n], fs.Vh[n]) for n in rng_]
    g01 = -_total(fs.diagonal([None] + [_mul(_T(prod[n]), fs.V[n]) for n in rng_]))
    Gp = [None] + [_mul(fs.W[k], fs.Vh[k]) for k in rng_]
    s = _total(fs.nested(fs.V, Gp, signed=True))
    u = _total(fs.nested(fs.V, Gp, signed=False))
    g02, g03 = (u - s) / 2, -(u + s) / 2
    G = [None] + [_mul(fs.Wh[k], fs.V[k]) for k in rng_]
    g04 = -_total(fs.nested(fs.Vh, G, signed=False))
    pd, po = fs.haar_sum_norm2(fs.V)
    # ||Pi* f||^2: sum over nested I, J of (<W>_J x_J, x_I)|J| with x = <W^-1 hat h> b
    sd = fs.diagonal([None] + [_mul(_T(fs.Vh[n]), _mul(fs.W[n], fs.Vh[n])) for n in rng_])
    so = fs.nested(fs.Vh, Gp, signed=False)
    kappa = [float(prod[n][0][0]) for n in rng_]
    return PairingReport(model.params.Q, N, g01, g02, g03, g04,
                         _total(pd) + 2 * _total(po), _total(sd) + 2 * _total(so),
                         f_norm2(model, b), kappa)


def companion_norms(model: WeightModel, b="a0") -> dict:
    """``||T f||_{L2(W)} / ||f||_{L2(W)}`` on the witness for Pi, Pi_1..3, S_L, S_L*."""
    fs = FrameSums(model, b)
    N = fs.n_max
    rng_ = range(1, N + 1)
    nf = f_norm2(model, b)
    out = {}
    d, o = fs.haar_sum_norm2(fs.V)
    out["pi"] = _total(d) + 2 * _total(o)
    d, o = fs.haar_sum_norm2(fs.VL)
    out["pi2"] = _total(d) + 2 * _total(o)
    d, o = fs.haar_sum_norm2(fs.VhL)
    out["S_L_adjoint"] = _total(d) + 2 * _total(o)
    out["pi1"] = _total(fs.left_sum_norm2(fs.VL))
    out["pi3"] = _total(fs.left_sum_norm2(fs.V))
    out["S_L"] = _total(fs.left_sum_norm2(fs.Vh))
    return {k: float(np.sqrt(v / nf)) for k, v in out.items()}


def _sub(A, B):
    return tuple(tuple(a - b for a, b in zip(ra, rb)) for ra, rb in zip(A, B))


def _add(A, B):
    return tuple(tuple(a + b for a, b in zip(ra, rb)) for ra, rb in zip(A, B))


@dataclass
class ShiftReport:
    """``(S - S*) f`` on the witness, through the sparse form of the odd shift.

    With ``x_I = (<W^-1>_I - <W^-1>_{L(I)}) b`` and ``y_I = (<W^-1 hat h_I>_I -
    <W^-1 hat h_{L(I)}>_{L(I)}) b``:
    ``S f = 2^{-1/2} sum x_I (hat h_I - hat h_{L(I)})`` and
    ``S* f = 2^{-1/2} sum y_I (1_I - 1_{L(I)})``.
    """
    Q: float
    n_max: int
    s_norm2: float
    sstar_norm2: float
    cross: float              # (S f, S* f)_{L2(W)}
    f_norm2: float

    @property
    def diff_norm2(self) -> float:
        return self.s_norm2 - 2 * self.cross + self.sstar_norm2

    def hdy_ratio(self, c1: float) -> float:
        """``||H^dy f|| / ||f||`` in ``L2(W)`` when ``c2 = 0``."""
        return abs(c1) * float(np.sqrt(self.diff_norm2 / self.f_norm2))


def odd_shift_norms(model: WeightModel, b="a0") -> ShiftReport:
    fs = FrameSums(model, b)
    rng_ = range(1, fs.n_max + 1)
    X = [None] + [_sub(fs.V[n], fs.VL[n]) for n in rng_]
    Y = [None] + [_sub(fs.Vh[n], fs.VhL[n]) for n in rng_]
    d, o = fs.haar_sum_norm2(X)
    a2 = (_total(d) + 2 * _total(o) + _total(fs.left_sum_norm2(X))) / 2
    WmL = [None] + [_sub(fs.W[n], fs.WL[n]) for n in rng_]
    bd = fs.diagonal([None] + [_mul(_T(Y[n]), _mul(_add(fs.W[n], fs.WL[n]), Y[n])) for n in rng_])
    bo = fs.nested(Y, [None] + [_mul(WmL[n], Y[n]) for n in rng_], signed=False)
    b2 = (_total(bd) + 2 * _total(bo)) / 2
    # W is constant on the children of L(I) only, so <W hat h_{L(I)}> enters twice
    cd = fs.diagonal([None] + [_mul(_T(Y[n]), _mul(_add(fs.Wh[n], fs.WhL[n]), X[n])) for n in rng_])
    c_in = fs.nested(X, [None] + [_mul(WmL[n], Y[n]) for n in rng_], signed=True)
    c_out = fs.nested(Y, [None] + [_mul(_sub(fs.Wh[n], fs.WhL[n]), X[n]) for n in rng_], signed=False)
    cross = (_total(cd) + _total(c_in) + _total(c_out)) / 2
    return ShiftReport(model.params.Q, fs.n_max, a2, b2, cross, f_norm2(model, b))


# ---------------------------------------------------------------------------
# per-pair diagnostics

def _frame(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([c, s]), np.array([-s, c])


def lower_bound_diagnostics(model: WeightModel, I, J, b="a0") -> dict:
    """Split ``(<W^-1>_I b, <W hat h_J>_J <W^-1>_J b)`` into its main term and residual.

    ``I``, ``J`` are stopping nodes (``model.node(path)``) with ``J`` strictly
    inside ``I`` and ``J`` below the last generation.
    """
    n, k = I.generation, J.generation
    if not (I.interval.contains(J.interval) and k > n):
        raise ValueError("J must be a stopping descendant of I")
    if k >= model.n_max:
        raise ValueError("J must lie above the last generation")
    b = witness_vector(b)
    rn, rk = model.table[n], model.table[k]
    rot = model.params.rotate
    dk = float(rk["delta"]) if rot else 0.0
    dn = float(rn["delta"]) if rot else 0.0
    aI, bI = _frame(I.phi)
    aJ, bJ = _frame(J.phi)
    m = dk * float(rk["t_alpha_s"] - rk["t_beta_s"]) / (1 + dk * dk)
    alpha_n, beta_n = float(rn["alpha"]), float(rn["beta"])
    alpha_k, beta_k = float(rk["alpha"]), float(rk["beta"])
    t_k = m * alpha_k
    s_J = -m * beta_k * (b @ bJ)
    t_J = t_k * (b @ aJ)
    sigma_I = alpha_n * (aI @ b)
    tau_I = beta_n * (bI @ b)
    # direct evaluation of the inner product
    VIb = sigma_I * aI + tau_I * bI
    whv = s_J * aJ - t_J * bJ
    exact = float(VIb @ whv)
    main = -alpha_n * t_k * (aI @ b) ** 2 * (aI @ bJ)
    scale = alpha_n * t_k * dn ** 2
    resid = exact - main
    t_tilde = model.params.q * np.sqrt(model.table.Q * float(rk["alpha_s"]) * alpha_k) if rot else 0.0
    return dict(n=n, k=k, s_J=s_J, t_J=t_J, sigma_I=sigma_I, tau_I=tau_I, exact=exact, main=main,
                residual=resid, C=abs(resid) / scale if scale > 0 else 0.0,
                t_k=t_k, t_tilde=t_tilde, t_ratio=t_k / t_tilde if t_tilde else float("nan"))


def lower_bound_direct(model: WeightModel, I, J, b="a0") -> float:
    """Oracle for ``lower_bound_diagnostics``: averages of ``J``'s children taken from the tree."""
    b = witness_vector(b)
    V_I = I.V.to_sym().to_array()
    (_, Wm), (_, Wp) = model.stopping_children(J.generation, J.phi)
    Wh = 0.5 * (Wp.to_sym().to_array() - Wm.to_sym().to_array())
    V_J = J.V.to_sym().to_array()
    return float((V_I @ b) @ (Wh @ V_J @ b))


def even_shift_diagnostics(model: WeightModel, k: int, phi: float = 0.0) -> dict:
    """Check the two regrouped differences of ``<W(hat h_{J+} - hat h_{J-})>_J`` for a
    stopping ``J`` of generation ``k < n_max``: both are multiples of ``a b^T + b a^T``
    with the closed-form coefficients, and they add up to the whole average."""
    if k >= model.n_max:
        raise ValueError("k must be below the last generation")
    row = model.table[k]
    Q = model.table.Q
    r = 2 - 1 / Q
    d = float(row["delta"]) if model.params.rotate else 0.0
    th = model.thetas[k] if model.params.rotate else 0.0
    sym = lambda s: s.to_sym().to_array()
    # grandchildren of J: J-+ , J++ stopping; J-- , J+- terminal
    Wpp = sym(model.stopping_avg(k + 1, phi + th)[1])
    Wmp = sym(model.stopping_avg(k + 1, phi - th)[1])
    Wpm = sym(model.terminal_avg(k, phi + th)[1])
    Wmm = sym(model.terminal_avg(k, phi - th)[1])
    a, bv = _frame(phi)
    X = np.outer(a, bv) + np.outer(bv, a)
    nxt = model.table[k + 1]
    c_stop = 0.5 * d / (1 + d * d) * float(nxt["beta_s"] - nxt["alpha_s"])
    sr = float(row["s"]) * r
    c_term = 0.5 * d / (1 + d * d) * float((2 - 1 / sr) * row["t_beta_s"] - (2 - r) * row["t_alpha_s"])
    stop = 0.25 * (Wpp - Wmp)
    term = 0.25 * (Wpm - Wmm)
    # <W (hat h_{J+} - hat h_{J-})>_J from the four grandchildren
    whole = 0.25 * (Wpp - Wpm - Wmp + Wmm)
    scale = max(abs(c_stop), abs(c_term), 1e-300)
    return dict(k=k, c_stop=c_stop, c_term=c_term,
                stop_err=float(np.abs(stop - c_stop * X).max() / scale),
                term_err=float(np.abs(term - c_term * X).max() / scale),
                whole_err=float(np.abs(whole - (stop - term)).max() / scale),
                bound_ratio=max(abs(c_stop), abs(c_term)) / (d * float(row["alpha_s"])) if d else 0.0)
