"""Dyadic operators on piecewise-constant vector functions.

Every operator here is a finite sum ``T f = sum_t c_t (f, phi_t) psi_t`` where
``phi_t`` and ``psi_t`` are indicators ``1_J`` or Haar functions ``h_J`` of
dyadic subintervals of ``[0, 1)``.  Storing the terms in that canonical form
makes adjoints a swap of the two sides and lets the same term list be applied
to a ``PiecewiseFn`` or assembled into a sparse matrix on a leaf tiling.

Families of stopping intervals come from a ``WeightModel``: ``S_<`` are the
stopping intervals below the root, ``L(I)`` is the terminal left sibling of
``I`` and ``hat I`` its rotated parent.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, svds

from .dyadic import UNIT, DepthError, DyadicInterval, PiecewiseFn, align, embed
from .forge import WeightModel
from .mat2 import sym_inv, sym_matvec, sym_sqrt

DEPTH_CAP = 24


# ---------------------------------------------------------------------------
# families

@dataclass(frozen=True)
class SparseFamily:
    """Dyadic intervals with generation labels and a declared Carleson constant."""
    name: str
    intervals: tuple
    generations: tuple
    lam: float

    def __len__(self) -> int:
        return len(self.intervals)

    def by_level(self) -> dict:
        out = defaultdict(list)
        for I in self.intervals:
            out[I.level].append(I.index)
        return {lev: np.array(sorted(ix), dtype=np.int64) for lev, ix in out.items()}

    def max_level(self) -> int:
        return max(I.level for I in self.intervals)

    def carleson_constant(self) -> float:
        """``max_J sum_{I in family, I subset J} |I| / |J|`` over every dyadic ``J``.

        Only ancestors of members can have a nonzero sum, so the mass is pushed
        up the tree from each member.
        """
        mass = defaultdict(float)
        for I in self.intervals:
            lev, j = I.level, I.index
            size = 2.0 ** -I.level
            while lev >= 0:
                mass[(lev, j)] += size
                lev, j = lev - 1, j >> 1
        return max(m * 2.0 ** lev for (lev, _), m in mass.items())

    def is_carleson(self) -> bool:
        return self.carleson_constant() <= self.lam * (1 + 1e-12)


def _stopping(model: WeightModel, n: int) -> list[DyadicInterval]:
    return [DyadicInterval(2 * n, int(j)) for j in model._stopping_indices(n)]


def stopping_family(model: WeightModel, include_root: bool = False) -> SparseFamily:
    """``S_<`` (or ``S`` with the root), 2-Carleson."""
    ivs, gens = [], []
    for n in range(0 if include_root else 1, model.n_max + 1):
        I = _stopping(model, n)
        ivs += I
        gens += [n] * len(I)
    return SparseFamily("S" if include_root else "S<", tuple(ivs), tuple(gens), 2.0)


def rotated_family(model: WeightModel) -> SparseFamily:
    """Parents ``hat I`` of ``I in S_<``, 2-Carleson."""
    S = stopping_family(model)
    return SparseFamily("S^", tuple(I.parent() for I in S.intervals), tuple(g - 1 for g in S.generations), 2.0)


def terminal_family(model: WeightModel) -> SparseFamily:
    S = stopping_family(model)
    return SparseFamily("T", tuple(I.sibling() for I in S.intervals), tuple(g - 1 for g in S.generations), 1.0)


def stopping_terminal_family(model: WeightModel) -> SparseFamily:
    """``S u T``, 4-Carleson."""
    S, T = stopping_family(model, include_root=True), terminal_family(model)
    return SparseFamily("SuT", S.intervals + T.intervals, S.generations + T.generations, 4.0)


def support_family(model: WeightModel) -> SparseFamily:
    """Every interval on which the witness can have a nonzero Haar coefficient."""
    S, R, T = stopping_family(model, True), rotated_family(model), terminal_family(model)
    return SparseFamily("SuS^uT", S.intervals + R.intervals + T.intervals,
                        S.generations + R.generations + T.generations, 5.0)


def single_family(I: DyadicInterval, lam: float = 1.0) -> SparseFamily:
    return SparseFamily("single", (I,), (0,), lam)


# ---------------------------------------------------------------------------
# canonical term lists

@dataclass
class TermOperator:
    """``T f = sum c (f, phi_src) psi_dst`` with ``phi, psi`` in {``ind``, ``h``}."""
    name: str
    groups: list = field(default_factory=list)   # (src_kind, src_level, src_idx, dst_kind, dst_level, dst_idx, coef)

    def add(self, src_kind, src_level, src_idx, dst_kind, dst_level, dst_idx, coef):
        src_idx = np.asarray(src_idx, dtype=np.int64)
        dst_idx = np.asarray(dst_idx, dtype=np.int64)
        coef = np.broadcast_to(np.asarray(coef, dtype=float), src_idx.shape).copy()
        if src_idx.size:
            self.groups.append((src_kind, src_level, src_idx, dst_kind, dst_level, dst_idx, coef))
        return self

    def adjoint(self) -> "TermOperator":
        out = TermOperator(self.name + "*")
        for sk, sl, si, dk, dl, di, c in self.groups:
            out.groups.append((dk, dl, di, sk, sl, si, c))
        return out

    def scaled(self, a: float) -> "TermOperator":
        out = TermOperator(f"{a}*{self.name}")
        for g in self.groups:
            out.groups.append(g[:6] + (a * g[6],))
        return out

    def __add__(self, other: "TermOperator") -> "TermOperator":
        return TermOperator(f"({self.name}+{other.name})", self.groups + other.groups)

    def __sub__(self, other: "TermOperator") -> "TermOperator":
        return self + other.scaled(-1.0)

    def depth_needed(self) -> int:
        d = 0
        for sk, sl, _, dk, dl, _, _ in self.groups:
            d = max(d, sl + (sk == "h"), dl + (dk == "h"))
        return d

    # -- application -------------------------------------------------------
    def apply(self, f: PiecewiseFn) -> PiecewiseFn:
        f = _on_unit(f)
        depth = max(f.depth, self.depth_needed())
        if depth > DEPTH_CAP:
            raise DepthError(f"output depth {depth} exceeds cap {DEPTH_CAP}")
        vs = f.value_shape
        out = np.zeros((2 ** depth,) + vs)
        cache = {}

        def avg(level):
            if level not in cache:
                cache[level] = f.averages(level)
            return cache[level]

        for sk, sl, si, dk, dl, di, c in self.groups:
            if sk == "ind":
                val = avg(sl)[si] * 2.0 ** -sl
            else:
                a = avg(sl + 1)
                val = 0.5 * 2.0 ** (-sl / 2) * (a[2 * si + 1] - a[2 * si])
            val = val * c.reshape((-1,) + (1,) * len(vs))
            if dk == "ind":
                view = out.reshape((2 ** dl, -1) + vs)
                np.add.at(view, di, val[:, None])
            else:
                view = out.reshape((2 ** (dl + 1), -1) + vs)
                step = val[:, None] * 2.0 ** (dl / 2)
                np.add.at(view, 2 * di + 1, step)
                np.add.at(view, 2 * di, -step)
        return PiecewiseFn(depth, UNIT, out)

    __call__ = apply

    # -- matrix on a tiling ----------------------------------------------------
    def matrix(self, tiling: "LeafTiling") -> sp.csr_matrix:
        """Scalar matrix of ``T`` on functions constant on the tiles."""
        n = len(tiling)
        M = sp.csr_matrix((n, n))
        for sk, sl, si, dk, dl, di, c in self.groups:
            Phi = tiling.functional(sk, sl, si)      # terms x tiles, includes tile lengths
            Psi = tiling.synthesis(dk, dl, di)       # terms x tiles
            M = M + Psi.T @ sp.diags(c) @ Phi
        return M.tocsr()


def _on_unit(f: PiecewiseFn) -> PiecewiseFn:
    if f.origin == UNIT:
        return f
    k, _ = f.origin.relative(UNIT)
    return embed(f, UNIT, k + f.depth)


# ---------------------------------------------------------------------------
# operator catalogue

def _all(level):
    return np.arange(2 ** level, dtype=np.int64)


def haar_shift(depth: int, parity: str | None = None) -> TermOperator:
    """``sum_J (f, h_J)[h_{J+} - h_{J-}]`` over levels ``< depth`` of the given parity."""
    T = TermOperator({None: "sha", "odd": "S_odd", "even": "S_even"}[parity])
    for lev in range(depth):
        if parity == "odd" and lev % 2 == 0 or parity == "even" and lev % 2 == 1:
            continue
        J = _all(lev)
        T.add("h", lev, J, "h", lev + 1, 2 * J + 1, 1.0)
        T.add("h", lev, J, "h", lev + 1, 2 * J, -1.0)
    return T


def odd_s0(depth: int, parity: str = "odd") -> TermOperator:
    """``sum_{J odd} (f, h_{J+}) h_{J-} - (f, h_{J-}) h_{J+}``; ``parity="even"`` shifts the anchor."""
    T = TermOperator("S0_" + parity)
    for lev in range(parity == "odd", depth - 1, 2):
        J = _all(lev)
        T.add("h", lev + 1, 2 * J + 1, "h", lev + 1, 2 * J, 1.0)
        T.add("h", lev + 1, 2 * J, "h", lev + 1, 2 * J + 1, -1.0)
    return T


def hdy(depth: int, c1: float, c2: float, parity: str = "odd") -> TermOperator:
    """``c1 (S - S*) + c2 S0`` built on the levels of the given parity."""
    S = haar_shift(depth, parity)
    out = (S - S.adjoint()).scaled(c1) + odd_s0(depth, parity).scaled(c2)
    out.name = "Hdy"
    return out


def _family_arrays(family: SparseFamily):
    return [(lev, idx) for lev, idx in sorted(family.by_level().items())]


def paraproduct_terms(family: SparseFamily) -> TermOperator:
    """``sum_{I in family} <f>_I hat h_I``."""
    T = TermOperator("pi")
    for lev, idx in _family_arrays(family):
        T.add("ind", lev, idx, "h", lev, idx, 2.0 ** (lev / 2))
    return T


def _sparse_pieces(model: WeightModel):
    """Per level of ``S_<``: indices of ``I``, ``L(I)`` and ``hat I``."""
    for lev, idx in _family_arrays(stopping_family(model)):
        yield lev, idx, idx - 1, idx >> 1


def sparse_operator(kind: str, model: WeightModel, constants=None) -> TermOperator:
    """Sparse operators built on the stopping tree of ``model``."""
    T = TermOperator(kind)
    if kind == "pi":
        return paraproduct_terms(stopping_family(model))
    if kind == "pi_adjoint":
        return paraproduct_terms(stopping_family(model)).adjoint()
    if kind == "sha_sparse":
        T = TermOperator(kind)
        for lev, idx in _family_arrays(support_family(model)):
            T.add("h", lev, idx, "h", lev + 1, 2 * idx + 1, 1.0)
            T.add("h", lev, idx, "h", lev + 1, 2 * idx, -1.0)
        return T
    if kind in ("S_L_adjoint", "S_sparse_adjoint", "pi1_adjoint", "pi2_adjoint", "pi3_adjoint"):
        return sparse_operator(kind[:-len("_adjoint")], model, constants).adjoint()
    if kind == "S0_sparse":
        SL = sparse_operator("S_L", model)
        out = SL - SL.adjoint()
        out.name = kind
        return out
    if kind == "Hdy_sparse":
        if constants is None:
            raise ValueError("Hdy needs constants (c1, c2)")
        c1, c2 = constants
        S = sparse_operator("S_sparse", model)
        out = (S - S.adjoint()).scaled(c1) + sparse_operator("S0_sparse", model).scaled(c2)
        out.name = kind
        return out
    for lev, I, L, P in _sparse_pieces(model):
        s = 2.0 ** (lev / 2)     # |I|^{-1/2}
        if kind == "pi1":
            T.add("ind", lev, L, "h", lev, L, s)
        elif kind == "pi2":
            T.add("ind", lev, L, "h", lev, I, s)
        elif kind == "pi3":
            T.add("ind", lev, I, "h", lev, L, s)
        elif kind == "S_L":
            T.add("h", lev, I, "h", lev, L, 1.0)
        elif kind == "S_sparse":
            T.add("h", lev - 1, P, "h", lev, I, 1.0)
            T.add("h", lev - 1, P, "h", lev, L, -1.0)
        else:
            raise ValueError(f"unknown operator kind {kind!r}")
    return T


FULL_KINDS = ("sha", "S_odd", "S_odd_adjoint", "S0_odd", "S_even", "Hdy")
SPARSE_KINDS = ("pi", "pi_adjoint", "pi1", "pi2", "pi3", "S_L", "S_L_adjoint", "sha_sparse",
                "S_sparse", "S_sparse_adjoint", "S0_sparse", "Hdy_sparse")
ALIASES = {"Ш": "sha", "Π": "pi", "Π₁": "pi1", "Π₂": "pi2", "Π₃": "pi3", "S_L*": "S_L_adjoint",
           "S0": "S0_odd", "S": "S_odd", "S*": "S_odd_adjoint", "H": "Hdy", "Hdy_S": "Hdy_sparse",
           "Ш_S": "sha_sparse", "S_S": "S_sparse", "S0_S": "S0_sparse"}


def make_operator(kind: str, depth: int | None = None, model: WeightModel | None = None,
                  constants=None) -> TermOperator:
    kind = ALIASES.get(kind, kind)
    if kind in FULL_KINDS:
        if depth is None:
            if model is None:
                raise ValueError("full shifts need the input depth")
            depth = model.leaf_depth
        if kind == "sha":
            return haar_shift(depth)
        if kind == "S_odd":
            return haar_shift(depth, "odd")
        if kind == "S_even":
            return haar_shift(depth, "even")
        if kind == "S_odd_adjoint":
            return haar_shift(depth, "odd").adjoint()
        if kind == "S0_odd":
            return odd_s0(depth)
        if constants is None:
            raise ValueError("Hdy needs constants (c1, c2)")
        return hdy(depth, *constants)
    if kind in SPARSE_KINDS:
        if model is None:
            raise ValueError(f"{kind} needs a WeightModel")
        return sparse_operator(kind, model, constants)
    raise ValueError(f"unknown operator kind {kind!r}")


def apply_shift(kind: str, f: PiecewiseFn, model: WeightModel | None = None, constants=None) -> PiecewiseFn:
    """Apply a Haar shift or sparse operator; vector values act componentwise."""
    f = _on_unit(f)
    return make_operator(kind, f.depth, model, constants).apply(f)


def apply_paraproduct(f: PiecewiseFn, family) -> PiecewiseFn:
    """``sum_{I in family} <f>_I hat h_I``; a ``WeightModel`` stands for its ``S_<``."""
    if isinstance(family, WeightModel):
        family = stopping_family(family)
    if family.max_level() + 1 > DEPTH_CAP:
        raise DepthError(f"family reaches level {family.max_level()}, beyond cap {DEPTH_CAP}")
    return paraproduct_terms(family).apply(f)


# ---------------------------------------------------------------------------
# weighted pairings

def _weight_fn(W) -> PiecewiseFn:
    if isinstance(W, WeightModel):
        return W.materialize()[0]
    if isinstance(W, PiecewiseFn):
        return W
    m = np.asarray(W, dtype=float)
    if m.shape == (2, 2):
        m = np.array([m[0, 0], m[0, 1], m[1, 1]])
    return PiecewiseFn.constant(m)


def weighted_pairing(W, f: PiecewiseFn, g: PiecewiseFn) -> float:
    """``int (W f, g)`` on the common refinement; ``W`` packed ``(w11, w12, w22)``."""
    Wf = _weight_fn(W)
    if Wf.origin != f.origin or f.origin != g.origin:
        raise ValueError(f"grid mismatch: {Wf.origin}, {f.origin}, {g.origin}")
    d = max(Wf.depth, f.depth, g.depth)
    w, a, b = Wf.refine(d).values, f.refine(d).values, g.refine(d).values
    return float(np.sum(sym_matvec(w, a) * b) * 2.0 ** -d * f.origin.length)


def weighted_norm(W, f: PiecewiseFn) -> float:
    return float(np.sqrt(weighted_pairing(W, f, f)))


def witness(model: WeightModel, b="a0", materialized=None) -> PiecewiseFn:
    """``1_{I0} W^{-1} b`` on the leaf grid."""
    from .paraproduct import witness_vector
    Wf, Vf = materialized if materialized is not None else model.materialize()
    return PiecewiseFn(Vf.depth, UNIT, sym_matvec(Vf.values, witness_vector(b)))


# ---------------------------------------------------------------------------
# leaf tilings and operator norms

class LeafTiling:
    """Coarsest dyadic tiling of ``[0,1)`` on which ``W`` is constant and every
    listed interval (and its halves) is a union of tiles."""

    def __init__(self, W: PiecewiseFn, families=()):
        D = W.depth
        vals = W.values.reshape(2 ** D, -1)
        brk = np.zeros(2 ** D + 1, dtype=bool)
        brk[1:-1] = np.any(vals[1:] != vals[:-1], axis=1)
        for fam in families:
            for lev, idx in fam.by_level().items():
                if lev >= D:
                    raise DepthError(f"family level {lev} not resolved by depth {D}")
                span = 2 ** (D - lev)
                brk[idx * span] = True
                brk[idx * span + span // 2] = True
        brk[0] = brk[-1] = False
        cs = np.cumsum(brk)
        starts, levels = [], []
        stack = [(0, 0)]
        while stack:
            lev, j = stack.pop()
            span = 2 ** (D - lev)
            a, b = j * span, (j + 1) * span
            if span > 1 and cs[b - 1] - cs[a] > 0:
                stack += [(lev + 1, 2 * j + 1), (lev + 1, 2 * j)]
            else:
                starts.append(a)
                levels.append(lev)
        order = np.argsort(starts)
        self.depth = D
        self.starts = np.asarray(starts, dtype=np.int64)[order]
        self.levels = np.asarray(levels, dtype=np.int64)[order]
        self.lengths = 2.0 ** -self.levels.astype(float)
        self.W = vals[self.starts].copy()

    def __len__(self) -> int:
        return len(self.starts)

    def _ranges(self, level, idx):
        span = 2 ** (self.depth - level)
        lo = np.searchsorted(self.starts, idx * span)
        hi = np.searchsorted(self.starts, (idx + 1) * span)
        return lo, hi

    def _entries(self, lo, hi):
        counts = hi - lo
        rows = np.repeat(np.arange(len(lo)), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        return rows, np.repeat(lo, counts) + offs

    def _basis(self, kind, level, idx, with_length: bool):
        level = int(level)
        lo, hi = self._ranges(level, idx)
        rows, cols = self._entries(lo, hi)
        vals = np.ones(len(rows))
        if kind == "h":
            span = 2 ** (self.depth - level)
            mid = idx[rows] * span + span // 2
            vals = np.where(self.starts[cols] >= mid, 1.0, -1.0) * 2.0 ** (level / 2)
        if with_length:
            vals = vals * self.lengths[cols]
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(idx), len(self)))

    def functional(self, kind, level, idx):
        return self._basis(kind, level, idx, True)

    def synthesis(self, kind, level, idx):
        return self._basis(kind, level, idx, False)

    def sample(self, f: PiecewiseFn) -> np.ndarray:
        """Tile averages of ``f``."""
        f = _on_unit(f)
        d = max(f.depth, self.depth)
        vals = f.refine(d).values
        span = 2 ** (d - self.depth)
        cum = np.concatenate([np.zeros((1,) + vals.shape[1:]), np.cumsum(vals, axis=0)])
        ends = np.append(self.starts[1:], 2 ** self.depth)
        return (cum[ends * span] - cum[self.starts * span]) / ((ends - self.starts) * span).reshape(
            (-1,) + (1,) * (vals.ndim - 1))

    def to_fn(self, x: np.ndarray) -> PiecewiseFn:
        reps = 2 ** (self.depth - self.levels)
        return PiecewiseFn(self.depth, UNIT, np.repeat(x, reps, axis=0))


class WeightedOperator:
    """``W^{1/2} T W^{-1/2}`` on ``L^2`` of the tiling; its norm is ``||T||_{L^2(W)}``."""

    def __init__(self, T: TermOperator, tiling: LeafTiling):
        self.T = T
        self.tiling = tiling
        self.M = T.matrix(tiling)
        self.Mt = self.M.T.tocsr()
        self.sq = sym_sqrt(tiling.W)
        self.isq = sym_inv(self.sq)
        self.rm = np.sqrt(tiling.lengths)[:, None]
        self.n = len(tiling)

    def matvec(self, y):
        x = sym_matvec(self.isq, y.reshape(-1, 2) / self.rm)
        return (self.rm * sym_matvec(self.sq, self.M @ x)).reshape(-1)

    def rmatvec(self, y):
        x = sym_matvec(self.sq, y.reshape(-1, 2) * self.rm)
        return (sym_matvec(self.isq, self.Mt @ x) / self.rm).reshape(-1)

    def linear_operator(self) -> LinearOperator:
        return LinearOperator((2 * self.n, 2 * self.n), matvec=self.matvec, rmatvec=self.rmatvec, dtype=float)

    def norm(self) -> float:
        """Largest singular value (iterative SVD, or dense for tiny tilings)."""
        if 2 * self.n <= 64:
            A = np.column_stack([self.matvec(e) for e in np.eye(2 * self.n)])
            return float(np.linalg.norm(A, 2))
        s = svds(self.linear_operator(), k=1, return_singular_vectors=False, tol=1e-10,
                 random_state=np.random.default_rng(0))
        return float(s[0])

    def estimate(self, n_tests: int = 64, power_steps: int = 8, seed: int = 0, extra=()) -> dict:
        """Max Rayleigh quotient ``||A y|| / ||y||`` over random starts refined by power steps."""
        rng = np.random.default_rng(seed)
        best = 0.0
        starts = [rng.standard_normal(2 * self.n) for _ in range(n_tests)] + [np.asarray(e, float) for e in extra]
        for y in starts:
            for _ in range(power_steps + 1):
                ny = np.linalg.norm(y)
                if ny == 0:
                    break
                y = y / ny
                Ay = self.matvec(y)
                best = max(best, float(np.linalg.norm(Ay)))
                y = self.rmatvec(Ay)
        return dict(norm=best, n_tests=n_tests, power_steps=power_steps, seed=seed)

    def embed_fn(self, f: PiecewiseFn) -> np.ndarray:
        """Coordinates ``sqrt|tile| W^{1/2} f`` of a tile-constant ``f``."""
        x = self.tiling.sample(f)
        return (self.rm * sym_matvec(self.sq, x)).reshape(-1)


def operator_norm(kind: str, model: WeightModel, constants=None, n_tests: int = 64,
                  power_steps: int = 8, seed: int = 0, exact: bool = True) -> dict:
    """``||T||_{L^2(W)}`` for a sparse operator on the materialized ``model``."""
    W, V = model.materialize()
    T = make_operator(kind, W.depth, model, constants)
    tiling = LeafTiling(W, [support_family(model)])
    A = WeightedOperator(T, tiling)
    f = witness(model, "a0", (W, V))
    rec = A.estimate(n_tests, power_steps, seed, extra=[A.embed_fn(f)])
    rec["kind"] = kind
    rec["tiles"] = len(tiling)
    if exact:
        rec["exact"] = A.norm()
    return rec


# ---------------------------------------------------------------------------
# square function

def square_function_norm(family: SparseFamily, W, g: PiecewiseFn) -> float:
    """``||S_1 g||_{L^2}`` with
    ``S_1 g(x)^2 = sum_{I in family} <|W(x)^{1/2} W^{-1/2} g|>_I^2 1_I(x)``."""
    Wf = _weight_fn(W)
    g = _on_unit(g)
    d = max(Wf.depth, g.depth, family.max_level())
    if d > 16:
        raise DepthError(f"square function grid depth {d} too large for pairwise evaluation")
    Wf = _on_unit(Wf).refine(d)
    tiling = LeafTiling(Wf, [family])
    x = tiling.sample(g)
    back, fine = align(tiling.to_fn(x), g)
    if not np.array_equal(back.values, fine.values):
        tiling = _uniform_tiling(Wf, d)
        x = tiling.sample(g)
    return _square_function_tiles(family, tiling, x)


def _uniform_tiling(W: PiecewiseFn, d: int) -> LeafTiling:
    t = LeafTiling.__new__(LeafTiling)
    t.depth = d
    t.starts = np.arange(2 ** d, dtype=np.int64)
    t.levels = np.full(2 ** d, d, dtype=np.int64)
    t.lengths = np.full(2 ** d, 2.0 ** -d)
    t.W = W.refine(d).values.reshape(2 ** d, -1)
    return t


def _square_function_tiles(family: SparseFamily, tiling: LeafTiling, g: np.ndarray) -> float:
    u = sym_matvec(sym_inv(sym_sqrt(tiling.W)), g)
    U = np.stack([u[:, 0] ** 2, 2 * u[:, 0] * u[:, 1], u[:, 1] ** 2], -1)
    m = tiling.lengths
    acc = np.zeros(len(tiling))
    for lev, idx in family.by_level().items():
        lo, hi = tiling._ranges(lev, idx)
        size = 2.0 ** -lev
        for a, b in zip(lo, hi):
            norms = np.sqrt(np.maximum(tiling.W[a:b] @ U[a:b].T, 0.0))   # x tiles by y tiles
            avg = norms @ m[a:b] / size
            acc[a:b] += avg ** 2
    return float(np.sqrt(np.sum(acc * m)))


def square_function_estimate(model: WeightModel, family: SparseFamily | None = None,
                             n_tests: int = 64, seed: int = 0) -> dict:
    """``sup ||S_1 g|| / ||g||`` over random tile-constant ``g`` and the witness ``W^{1/2} f``."""
    W, V = model.materialize()
    family = stopping_terminal_family(model) if family is None else family
    tiling = LeafTiling(W, [family])
    rng = np.random.default_rng(seed)
    cands = [rng.standard_normal((len(tiling), 2)) for _ in range(n_tests)]
    for name in ("a0", "a0+b0"):
        f = tiling.sample(witness(model, name, (W, V)))
        cands.append(sym_matvec(sym_sqrt(tiling.W), f))
    best = 0.0
    for g in cands:
        ng = np.sqrt(np.sum(tiling.lengths[:, None] * g ** 2))
        best = max(best, _square_function_tiles(family, tiling, g) / ng)
    return dict(norm=best, n_tests=n_tests, seed=seed, tiles=len(tiling), family=family.name)
