"""Periodization, quasi-periodization and remodeling of weight pairs.

Iterated (quasi-)periodization works on *starting intervals*: a starting
interval ``I`` of order ``k`` carries a copy of the source on ``J = F(I)``, a
dyadic interval of level ``2k-1``.  ``I`` is cut into ``2^N`` stopping
intervals, each receiving a shrunken copy of the source on ``J``; the
grandchildren of the (regular) stopping intervals are the next starting
intervals, with the grandchildren of ``J`` as sources.  Under
quasi-periodization the two boundary stopping intervals are *exceptional* and
only receive the average over ``J``.

Repairs push the remodeling far below any uniform grid, so results live in
``PieceFn``: a finite dyadic partition of ``[0,1)`` with one value per piece.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import mat2
from .dyadic import DEFAULT_DEPTH_CAP, UNIT, DepthError, DyadicInterval, PiecewiseFn
from .forge import WeightModel

PIECE_LEVEL_CAP = 48     # keeps left endpoints exact in double precision


# ---------------------------------------------------------------------------
# frequency vectors

@dataclass(frozen=True)
class FrequencyVector:
    """``(N_1, N_2, ...)``; the last entry repeats for all later orders."""
    values: tuple

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals or min(vals) < 2:
            raise ValueError(f"frequencies must be integers >= 2, got {self.values}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, N: int) -> "FrequencyVector":
        return cls((N,))

    def __getitem__(self, k: int) -> int:
        if k < 1:
            raise IndexError("orders start at 1")
        return self.values[min(k, len(self.values)) - 1]

    def __str__(self) -> str:
        return "(" + ",".join(map(str, self.values)) + ",...)"


def _freq(N) -> FrequencyVector:
    if isinstance(N, FrequencyVector):
        return N
    if isinstance(N, int):
        return FrequencyVector.constant(N)
    return FrequencyVector(tuple(N))


# ---------------------------------------------------------------------------
# single-interval operations on uniform grids

def periodize(f: PiecewiseFn, N: int) -> PiecewiseFn:
    """``2^N`` shrunken copies of ``f`` on its own support."""
    if N < 0:
        raise ValueError("N must be >= 0")
    if f.depth + N > DEFAULT_DEPTH_CAP:
        raise DepthError(f"periodization needs depth {f.depth + N} > {DEFAULT_DEPTH_CAP}")
    reps = (2 ** N,) + (1,) * (f.values.ndim - 1)
    return PiecewiseFn(f.depth + N, f.origin, np.tile(f.values, reps))


def quasi_periodize(f: PiecewiseFn, N: int) -> PiecewiseFn:
    """``periodize`` with the two boundary copies replaced by the mean of ``f``."""
    if N < 2:
        raise ValueError(f"quasi-periodization needs N >= 2, got {N}")
    out = periodize(f, N)
    span = 2 ** f.depth
    vals = out.values.copy()
    vals[:span] = f.mean()
    vals[-span:] = f.mean()
    return PiecewiseFn(out.depth, out.origin, vals)


def boundary_average_check(f: PiecewiseFn, N: int) -> float:
    """Largest deviation of ``<QP^N f>_I`` from ``<f>`` over dyadic ``I`` touching the boundary,
    relative to the largest entry of ``<f>``."""
    g = quasi_periodize(f, N)
    m = f.mean()
    scale = float(np.abs(m).max()) or 1.0
    worst = 0.0
    for lev in range(g.depth + 1):
        a = g.averages(lev)
        worst = max(worst, float(np.abs(a[0] - m).max()), float(np.abs(a[-1] - m).max()))
    return worst / scale


# ---------------------------------------------------------------------------
# adaptive piecewise-constant functions

class PieceFn:
    """Piecewise constant on a finite dyadic partition of ``[0,1)``."""

    def __init__(self, pieces: dict, value_shape: tuple = ()):
        self.pieces = pieces
        self.value_shape = tuple(value_shape)
        self._cache = None

    @classmethod
    def from_fn(cls, f: PiecewiseFn) -> "PieceFn":
        if f.origin != UNIT:
            raise ValueError("PieceFn lives on [0,1)")
        return cls({(f.depth, j): f.values[j] for j in range(2 ** f.depth)}, f.value_shape)

    def _arrays(self):
        if self._cache is None:
            keys = sorted(self.pieces, key=lambda k: k[1] * 2.0 ** -k[0])
            lev = np.array([k[0] for k in keys])
            left = np.array([k[1] * 2.0 ** -k[0] for k in keys])
            length = 2.0 ** -lev
            vals = np.array([self.pieces[k] for k in keys], dtype=float).reshape((len(keys),) + self.value_shape)
            w = length.reshape((-1,) + (1,) * len(self.value_shape))
            cum = np.concatenate([np.zeros((1,) + self.value_shape), np.cumsum(vals * w, axis=0)])
            self._cache = (keys, lev, left, length, vals, cum)
        return self._cache

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def max_level(self) -> int:
        return max(k[0] for k in self.pieces)

    def integral(self):
        return self._arrays()[5][-1]

    def primitive(self, x):
        """``int_0^x`` for ``x`` in ``[0, 1]``, extended periodically beyond."""
        _, _, left, _, vals, cum = self._arrays()
        x = np.asarray(x, dtype=float)
        per = np.floor(x)
        r = x - per
        i = np.clip(np.searchsorted(left, r, side="right") - 1, 0, len(left) - 1)
        shape = (-1,) + (1,) * len(self.value_shape)
        base = cum[i] + (r - left[i]).reshape(shape) * vals[i]
        return base + per.reshape(shape) * cum[-1]

    def average(self, a, b):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        return (self.primitive(b) - self.primitive(a)) / (b - a).reshape((-1,) + (1,) * len(self.value_shape))

    def average_on(self, I: DyadicInterval):
        return self.average(np.array([float(I.left)]), np.array([float(I.right)]))[0]

    def to_fn(self, depth: int | None = None) -> PiecewiseFn:
        depth = self.max_level if depth is None else depth
        if depth < self.max_level:
            raise DepthError(f"pieces go down to level {self.max_level} > {depth}")
        if depth > DEFAULT_DEPTH_CAP:
            raise DepthError(f"depth {depth} exceeds cap {DEFAULT_DEPTH_CAP}")
        out = np.zeros((2 ** depth,) + self.value_shape)
        for (lev, j), v in self.pieces.items():
            span = 2 ** (depth - lev)
            out[j * span:(j + 1) * span] = v
        return PiecewiseFn(depth, UNIT, out)

    def _value_at(self, key):
        lev, j = key
        while key not in self.pieces:
            lev, j = lev - 1, j >> 1
            key = (lev, j)
            if lev < 0:
                raise KeyError("not a refinement of this partition")
        return self.pieces[key]


def _joint(V: PieceFn, W: PieceFn):
    """Common partition as sorted arrays ``(lev, idx, left, [V | W] values)``."""
    keys = set(V.pieces)
    if V.pieces.keys() == W.pieces.keys():
        keys = sorted(keys, key=lambda k: k[1] * 2.0 ** -k[0])
        lev = np.array([k[0] for k in keys], dtype=np.int64)
        idx = np.array([k[1] for k in keys], dtype=np.int64)
        vals = np.hstack([np.array([V.pieces[k] for k in keys], dtype=float).reshape(len(keys), -1),
                          np.array([W.pieces[k] for k in keys], dtype=float).reshape(len(keys), -1)])
        return lev, idx, idx * 2.0 ** -lev, vals
    anc = set()
    for lev, j in keys | set(W.pieces):
        for d in range(1, lev + 1):
            anc.add((lev - d, j >> d))
    keys = (keys | set(W.pieces)) - anc
    keys = sorted(keys, key=lambda k: k[1] * 2.0 ** -k[0])
    lev = np.array([k[0] for k in keys], dtype=np.int64)
    idx = np.array([k[1] for k in keys], dtype=np.int64)
    vals = np.array([np.concatenate([np.ravel(V._value_at(k)), np.ravel(W._value_at(k))]) for k in keys])
    return lev, idx, idx * 2.0 ** -lev, vals


def _packed_product_defect(w, v):
    """Entrywise max of ``|W V - I|`` for packed symmetric rows."""
    p00 = w[:, 0] * v[:, 0] + w[:, 1] * v[:, 1] - 1
    p01 = w[:, 0] * v[:, 1] + w[:, 1] * v[:, 2]
    p10 = w[:, 1] * v[:, 0] + w[:, 2] * v[:, 1]
    p11 = w[:, 1] * v[:, 1] + w[:, 2] * v[:, 2] - 1
    return np.max(np.abs(np.stack([p00, p01, p10, p11])), axis=0)


def defect(W: PieceFn, V: PieceFn, tol: float = 1e-9):
    """Measure of the set where ``W V != I`` and the largest entrywise defect."""
    lev, _, _, vals = _joint(V, W)
    e = _packed_product_defect(vals[:, 3:], vals[:, :3])
    bad = e > tol
    return float(np.sum(2.0 ** -lev[bad])), float(e.max(initial=0.0))


def _sym_prod_minus_id(w, v):
    W = np.array([[w[0], w[1]], [w[1], w[2]]])
    V = np.array([[v[0], v[1]], [v[1], v[2]]])
    return W @ V - np.eye(2)


# ---------------------------------------------------------------------------
# bookkeeping

@dataclass
class OrderBook:
    starts: list = field(default_factory=list)        # (I, J)
    stops: int = 0
    exceptional: list = field(default_factory=list)   # (I, J)
    regular: int = 0

    def start_mass(self) -> dict:
        """``sum |I|`` over starting intervals grouped by ``J = F(I)``."""
        mass = defaultdict(float)
        for I, J in self.starts:
            mass[J] += I.length
        return dict(mass)


@dataclass
class RemodelBookkeeping:
    orders: dict = field(default_factory=lambda: defaultdict(OrderBook))
    pieces: int = 0

    def order(self, k: int) -> OrderBook:
        return self.orders[k]

    def exceptional(self) -> list:
        return [(k, I, J) for k, ob in sorted(self.orders.items()) for I, J in ob.exceptional]

    def exceptional_measure(self) -> float:
        return sum(I.length for _, I, _ in self.exceptional())

    def summary_rows(self) -> list[dict]:
        return [dict(order=k, starts=len(ob.starts), stops=ob.stops, exceptional=len(ob.exceptional),
                     regular=ob.regular, targets=len({J for _, J in ob.starts}))
                for k, ob in sorted(self.orders.items())]


# ---------------------------------------------------------------------------
# the recursion

class _Source:
    """Source function on ``[0,1)`` with per-level means and constancy flags."""

    def __init__(self, f: PiecewiseFn):
        if f.origin != UNIT:
            raise ValueError("iterated quasi-periodization acts on functions on [0,1)")
        self.f = f
        flat = f.values.reshape(2 ** f.depth, -1)
        self.means, self.const = [], []
        lo = hi = flat
        for lev in range(f.depth, -1, -1):
            self.means.append(f.averages(lev).reshape(2 ** lev, -1))
            self.const.append(np.all(lo == hi, axis=1))
            if lev:
                lo = np.minimum(lo[0::2], lo[1::2])
                hi = np.maximum(hi[0::2], hi[1::2])
        self.means.reverse()
        self.const.reverse()

    def block(self, J: DyadicInterval):
        d = self.f.depth
        flat = self.f.values.reshape(2 ** d, -1)
        if J.level >= d:
            return flat[J.index >> (J.level - d)][None, :]
        span = 2 ** (d - J.level)
        return flat[J.index * span:(J.index + 1) * span]

    def constant_on(self, J: DyadicInterval) -> bool:
        return J.level >= self.f.depth or bool(self.const[J.level][J.index])

    def mean(self, J: DyadicInterval):
        d = self.f.depth
        if J.level >= d:
            return self.means[d][J.index >> (J.level - d)].reshape(self.f.value_shape)
        return self.means[J.level][J.index].reshape(self.f.value_shape)


def _qp_from(sources: list, I: DyadicInterval, J: DyadicInterval, k: int, freq: FrequencyVector,
             quasi: bool, out: list, book: RemodelBookkeeping, level_cap: int, on_start=None):
    """Run the start/stop recursion below the starting interval ``I`` (source ``J``, order ``k``).

    ``out[i]`` receives the pieces of ``sources[i]``.
    """
    stack = [(I, J, k)]
    while stack:
        I, J, k = stack.pop()
        if all(s.constant_on(J) for s in sources):
            if I.level > level_cap:
                raise DepthError(f"piece at level {I.level} exceeds cap {level_cap}")
            for s, o in zip(sources, out):
                o[(I.level, I.index)] = s.mean(J)
            continue
        ob = book.orders[k]
        ob.starts.append((I, J))
        if on_start is not None:
            on_start(I, J, k)
        N = freq[k]
        lev = I.level + N
        if lev > level_cap:
            raise DepthError(f"stopping level {lev} exceeds cap {level_cap}")
        base = I.index << N
        ob.stops += 2 ** N
        for i in range(2 ** N):
            S = DyadicInterval(lev, base + i)
            if quasi and (i == 0 or i == 2 ** N - 1):
                ob.exceptional.append((S, J))
                for s, o in zip(sources, out):
                    o[(S.level, S.index)] = s.mean(J)
                continue
            ob.regular += 1
            for g in range(4):
                stack.append((DyadicInterval(lev + 2, (S.index << 2) + g),
                              DyadicInterval(J.level + 2, (J.index << 2) + g), k + 1))


def _initial_starts():
    return [(UNIT.minus, UNIT.minus), (UNIT.plus, UNIT.plus)]


def _run(fns, freq, quasi, level_cap):
    sources = [_Source(f) for f in fns]
    outs = [dict() for _ in fns]
    book = RemodelBookkeeping()
    for I, J in _initial_starts():
        _qp_from(sources, I, J, 1, freq, quasi, outs, book, level_cap)
    book.pieces = len(outs[0])
    return [PieceFn(o, f.value_shape) for o, f in zip(outs, fns)], book


def iterated_qp(f: PiecewiseFn, N, depth: int = 14, quasi: bool = True):
    """Iterated quasi-periodization (``quasi=False``: plain periodization) on ``[0,1)``.

    Returns the result on a uniform grid of at most ``depth`` levels and the
    start/stop bookkeeping.
    """
    (res,), book = _run([f], _freq(N), quasi, depth)
    return res.to_fn(max(res.max_level, 1)), book


def iterated_qp_pieces(fns, N, quasi: bool = True, level_cap: int = PIECE_LEVEL_CAP):
    return _run(list(fns), _freq(N), quasi, level_cap)


def decomposition_oracle(f: PiecewiseFn, N, book: RemodelBookkeeping, depth: int) -> PiecewiseFn:
    """``E_1 f + sum_{I in Start'} QP_I^{N_k}((Delta^2_J f) o psi_{J,I})`` summed on a grid."""
    freq = _freq(N)
    src = _Source(f)
    out = np.zeros((2 ** depth,) + f.value_shape)
    for half in (UNIT.minus, UNIT.plus):
        span = 2 ** (depth - 1)
        out[half.index * span:(half.index + 1) * span] = src.mean(half)
    for k, ob in book.orders.items():
        Nk = freq[k]
        for I, J in ob.starts:
            blk = src.block(J).reshape((-1,) + f.value_shape)
            if blk.shape[0] < 4:
                # J sits within two levels of the leaves: its grandchildren are sub-cells
                blk = np.repeat(blk, 4 // blk.shape[0], axis=0)
            fine = blk.reshape((4, -1) + f.value_shape).mean(axis=1)
            d2 = fine - blk.mean(axis=0)
            copy = PiecewiseFn(2, I, d2)
            qp = quasi_periodize(copy, Nk)
            span = 2 ** (depth - I.level - qp.depth)
            if span < 1:
                raise DepthError("oracle grid too coarse")
            lo = I.index * 2 ** (depth - I.level)
            out[lo:lo + qp.values.shape[0] * span] += np.repeat(qp.values, span, axis=0)
    return PiecewiseFn(depth, UNIT, out)


# ---------------------------------------------------------------------------
# remodeling of weight pairs

@dataclass
class RepairRound:
    round: int
    repaired: int
    exceptional_measure: float
    defect_measure: float
    max_defect: float
    strong_dyadic_A2: float
    hypothesis_max: float        # max over repaired J of ||<V>^1/2 <W>^1/2||^2
    pieces: int
    by_order: dict = field(default_factory=dict)   # exceptional measure per order


@dataclass
class RemodelResult:
    W: PieceFn
    V: PieceFn
    book: RemodelBookkeeping
    rounds: list

    def ratios(self) -> list[float]:
        m = [r.defect_measure for r in self.rounds]
        return [b / a for a, b in zip(m, m[1:]) if a > 0]


def remodel_weights(model: WeightModel, N=4, iterations: int = 8, depth: int = 14,
                    level_cap: int = PIECE_LEVEL_CAP, track_a2: bool = True) -> RemodelResult:
    """Quasi-periodize ``(W, V)`` with ``N`` and repair exceptional intervals with ``QP^(2,2,...)``.

    Each round repairs the exceptional stopping intervals created by the
    previous one, treating them as starting intervals of the same order.
    """
    Wf, Vf = model.materialize()
    if Wf.depth > depth:
        raise DepthError(f"model leaf depth {Wf.depth} exceeds working depth {depth}")
    freq = _freq(N)
    sources = [_Source(Wf), _Source(Vf)]
    outs = [dict(), dict()]
    book = RemodelBookkeeping()
    hyp = [0.0]

    seen = {}

    def check(I, J, k):
        if J not in seen:
            w, v = sources[0].mean(J), sources[1].mean(J)
            seen[J] = float(mat2.pair_char_arrays(v[None], w[None])[0])
        hyp[0] = max(hyp[0], seen[J])

    for I, J in _initial_starts():
        _qp_from(sources, I, J, 1, freq, True, outs, book, depth, check)
    W, V = PieceFn(outs[0], (3,)), PieceFn(outs[1], (3,))
    rounds = [_round_report(0, 0, book.exceptional(), W, V, hyp[0], track_a2)]
    pending = book.exceptional()
    two = FrequencyVector.constant(2)
    for r in range(1, iterations + 1):
        rbook = RemodelBookkeeping()
        hyp[0] = 0.0
        for k, I, J in pending:
            check(I, J, k)
            del outs[0][(I.level, I.index)], outs[1][(I.level, I.index)]
            _qp_from(sources, I, J, k, two, True, outs, rbook, level_cap)
        for k, ob in rbook.orders.items():
            tgt = book.orders[k]
            tgt.starts.extend(ob.starts)
            tgt.stops += ob.stops
            tgt.regular += ob.regular
            tgt.exceptional.extend(ob.exceptional)
        W, V = PieceFn(outs[0], (3,)), PieceFn(outs[1], (3,))
        rounds.append(_round_report(r, len(pending), rbook.exceptional(), W, V, hyp[0], track_a2))
        pending = rbook.exceptional()
    book.pieces = len(W)
    return RemodelResult(W, V, book, rounds)


def _round_report(r, repaired, exc, W, V, hyp, track_a2):
    dm, md = defect(W, V)
    sd = strong_dyadic_A2(V, W) if track_a2 else float("nan")
    by_order = defaultdict(float)
    for k, I, _ in exc:
        by_order[k] += I.length
    return RepairRound(r, repaired, sum(by_order.values()), dm, md, sd, hyp, len(W), dict(by_order))


# ---------------------------------------------------------------------------
# A2 characteristics on partitions

def _as_pieces(f) -> PieceFn:
    return f if isinstance(f, PieceFn) else PieceFn.from_fn(f)


def _node_levels(lev, idx, vals) -> dict:
    """Per level, sorted indices and averages of every piece and every ancestor of a piece."""
    nodes = {}
    ci = np.zeros(0, dtype=np.int64)
    cv = np.zeros((0, vals.shape[1]))
    for ell in range(int(lev.max()), -1, -1):
        sel = lev == ell
        i = np.concatenate([idx[sel], ci])
        v = np.concatenate([vals[sel], cv])
        order = np.argsort(i, kind="stable")
        i, v = i[order], v[order]
        nodes[ell] = (i, v)
        if ell == 0:
            break
        if len(i) % 2 or np.any(i[0::2] % 2) or np.any(i[1::2] != i[0::2] + 1):
            raise ValueError("pieces do not form a dyadic partition of [0,1)")
        ci, cv = i[0::2] >> 1, 0.5 * (v[0::2] + v[1::2])
    return nodes


def _averages_at(nodes, left, vals, ell, j):
    """Averages over the dyadic intervals ``(ell, j)``: node values, else the containing piece."""
    i, v = nodes[ell]
    pos = np.clip(np.searchsorted(i, j), 0, max(len(i) - 1, 0))
    hit = (i[pos] == j) if len(i) else np.zeros(len(j), bool)
    out = np.empty((len(j), vals.shape[1]))
    out[hit] = v[pos[hit]]
    miss = ~hit
    if np.any(miss):
        x = j[miss] * 2.0 ** -ell
        out[miss] = vals[np.searchsorted(left, x, side="right") - 1]
    return out


def _a2_candidates(V, W, periodic: bool, pairs: bool):
    V, W = _as_pieces(V), _as_pieces(W)
    lev, idx, left, vals = _joint(V, W)
    nodes = _node_levels(lev, idx, vals)
    best = 0.0
    m = vals.shape[1] // 2
    for ell, (i, v) in nodes.items():
        cands = [v]
        if pairs:
            n = 2 ** ell
            for shift in (-1, 1):
                j = i + shift
                ok = np.ones(len(j), bool) if periodic else (j >= 0) & (j < n)
                other = _averages_at(nodes, left, vals, ell, np.mod(j[ok], n))
                cands.append(0.5 * (v[ok] + other))
        c = np.concatenate(cands)
        if len(c):
            best = max(best, float(np.max(mat2.pair_char_arrays(c[:, :m], c[:, m:]))))
    return best


def strong_dyadic_A2(V, W, periodic: bool = True) -> float:
    """Sup of ``||<V>^1/2 <W>^1/2||^2`` over unions of two adjacent equal dyadic intervals.

    Only pairs with at least one partition node need checking: finer pairs
    inside one piece, or straddling two pieces, repeat an average already seen.
    """
    return _a2_candidates(V, W, periodic, True)


def dyadic_A2_pieces(V, W) -> float:
    """Sup over dyadic intervals at or above the partition."""
    return _a2_candidates(V, W, True, False)


def sampled_A2(V, W, n: int = 20000, seed: int = 0, min_log2_length: float = -30.0) -> float:
    """``||<V>^1/2 <W>^1/2||^2`` maximised over random intervals of the periodic extension."""
    V, W = _as_pieces(V), _as_pieces(W)
    rng = np.random.default_rng(seed)
    a = rng.random(n)
    length = 2.0 ** rng.uniform(min_log2_length, 1.0, n)
    b = a + length
    return float(np.max(mat2.pair_char_arrays(V.average(a, b), W.average(a, b))))


# ---------------------------------------------------------------------------
# transference

@dataclass
class TransferenceRow:
    N: int
    lhs: float
    rhs: float
    abs_err: float
    leakage: float


def _leakage(fp: PieceFn) -> float:
    """``|| 1_{R \\ [0,1)} H^R fp ||_{L2}`` for a mean-zero ``fp`` supported in ``[0,1)``."""
    from .kernels import hilbert_line
    f = fp.to_fn()

    def h2(s):
        return float(np.sum(hilbert_line(f, [s]) ** 2))

    right = integrate.quad(h2, 1.0, 2.0, limit=400)[0] + integrate.quad(lambda u: h2(1 + 1 / u) / u ** 2, 0, 1, limit=400)[0]
    left = integrate.quad(lambda s: h2(-s), 0.0, 1.0, limit=400)[0] + integrate.quad(lambda u: h2(-1 / u) / u ** 2, 0, 1, limit=400)[0]
    return float(np.sqrt(left + right))


def transference_experiment(f: PiecewiseFn, g: PiecewiseFn, Ns=(3, 5, 7), constants=None,
                            leakage: bool = True) -> list[TransferenceRow]:
    """Line pairing of ``QP^(N,N,...)`` copies against the dyadic model plus the ``c0`` term."""
    from .kernels import compute_constants, pairing_line
    from .operators import hdy
    from .dyadic import inner
    kc = constants or compute_constants()
    d = max(f.depth, g.depth, 1)
    Hf = hdy(d, kc.c1, kc.c2).apply(f)
    fm, fp = f.average_on(UNIT.minus), f.average_on(UNIT.plus)
    gm, gp = g.average_on(UNIT.minus), g.average_on(UNIT.plus)
    rhs = inner(Hf, g) + kc.c0 * (float(np.dot(np.ravel(fp), np.ravel(gm))) - float(np.dot(np.ravel(fm), np.ravel(gp))))
    rows = []
    f0 = f - PiecewiseFn.constant(f.mean(), 0).refine(f.depth) if leakage else None
    for N in Ns:
        (qf, qg), _ = iterated_qp_pieces([f, g], N, True, DEFAULT_DEPTH_CAP)
        lhs = pairing_line(qf.to_fn(), qg.to_fn())
        leak = float("nan")
        if leakage:
            leak = _leakage(PieceFn.from_fn(periodize(f0, N)))
        rows.append(TransferenceRow(N, lhs, rhs, abs(lhs - rhs), leak))
    return rows
