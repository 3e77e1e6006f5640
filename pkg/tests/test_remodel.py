import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from a2lab import mat2
from a2lab.dyadic import UNIT, DyadicInterval, PiecewiseFn, haar_function
from a2lab.forge import ConstructionParams, build_weight
from a2lab.remodel import (FrequencyVector, PieceFn, boundary_average_check, decomposition_oracle, defect,
                           dyadic_A2_pieces, iterated_qp, periodize, quasi_periodize, remodel_weights,
                           sampled_A2, strong_dyadic_A2, transference_experiment)

vals8 = arrays(float, 8, elements=st.floats(-10, 10))


def l2(f):
    return float(np.sum(f.values ** 2) * f.cell_length)


def test_frequency_vector():
    v = FrequencyVector((4, 3))
    assert [v[k] for k in (1, 2, 3, 9)] == [4, 3, 3, 3]
    with pytest.raises(ValueError):
        FrequencyVector((1,))


def test_periodize_constant():
    f = PiecewiseFn.constant(2.5, 2)
    assert np.all(periodize(f, 3).values == 2.5)


@given(vals8, vals8, st.integers(0, 5))
def test_periodize_preserves_products(a, b, N):
    f, g = PiecewiseFn(3, UNIT, a), PiecewiseFn(3, UNIT, b)
    pf, pg = periodize(f, N), periodize(g, N)
    assert np.sum(pf.values * pg.values) * pf.cell_length == pytest.approx(np.sum(a * b) / 8, abs=1e-9)
    # every child of order N carries the full average
    assert np.allclose(pf.averages(N), f.mean())


def test_quasi_periodize_constant_and_guard():
    f = PiecewiseFn.constant(1.5, 2)
    assert np.all(quasi_periodize(f, 3).values == 1.5)
    with pytest.raises(ValueError):
        quasi_periodize(f, 1)


@given(vals8, st.integers(2, 6))
def test_quasi_periodize_boundary_averages(a, N):
    f = PiecewiseFn(3, UNIT, a + 20.0)
    assert boundary_average_check(f, N) <= 1e-12


@given(vals8, st.integers(2, 8))
def test_quasi_periodize_distance(a, N):
    f = PiecewiseFn(3, UNIT, a)
    d = periodize(f, N) - quasi_periodize(f, N)
    assert math.sqrt(l2(d)) <= np.abs(a).max() * math.sqrt(2 * 2.0 ** -N) + 1e-12


def test_iterated_qp_fixes_half_constants():
    f = PiecewiseFn(1, UNIT, np.array([3.0, -1.0]))
    g, book = iterated_qp(f, 4)
    assert np.allclose(g.refine(3).values, f.refine(3).values)
    assert book.exceptional_measure() == 0


@pytest.mark.parametrize("N", [2, 3, (4, 2, 3)])
def test_iterated_qp_matches_decomposition(N):
    rng = np.random.default_rng(5)
    f = PiecewiseFn(4, UNIT, rng.standard_normal(16))
    g, book = iterated_qp(f, N, depth=20)
    oracle = decomposition_oracle(f, N, book, g.depth)
    assert np.abs(g.values - oracle.values).max() <= 1e-12


def test_iterated_qp_norm_trend():
    rng = np.random.default_rng(1)
    f = PiecewiseFn(3, UNIT, rng.standard_normal(8))
    norms = [l2(iterated_qp(f, N, depth=20)[0]) for N in (2, 4, 6)]
    assert norms[0] < norms[1] < norms[2] < l2(f)
    assert l2(f) - norms[2] < 0.1 * l2(f)


def test_periodization_start_mass():
    rng = np.random.default_rng(2)
    f = PiecewiseFn(4, UNIT, rng.standard_normal(16))
    _, book = iterated_qp(f, 2, depth=20, quasi=False)
    for k, ob in book.orders.items():
        # copies of J of order k cover a set of total length |J|
        for J, mass in ob.start_mass().items():
            assert mass == pytest.approx(J.length)
        assert not ob.exceptional


def test_two_exceptional_cells_per_start():
    rng = np.random.default_rng(3)
    f = PiecewiseFn(4, UNIT, rng.standard_normal(16))
    _, book = iterated_qp(f, 3, depth=20)
    for ob in book.orders.values():
        assert len(ob.exceptional) == 2 * len(ob.starts)
        assert ob.regular == ob.stops - 2 * len(ob.starts)


def test_piecefn_averages():
    p = PieceFn({(1, 0): 1.0, (2, 2): 3.0, (2, 3): 5.0})
    assert p.integral() == pytest.approx(0.5 + 0.75 + 1.25)
    assert p.average(np.array([0.25]), np.array([0.75]))[0] == pytest.approx((0.25 + 0.75) / 0.5)
    # periodic extension
    assert p.average(np.array([0.75]), np.array([1.25]))[0] == pytest.approx((1.25 + 0.25) / 0.5)
    assert np.allclose(p.to_fn().values, [1, 1, 3, 5])


# --- A2 on partitions --------------------------------------------------------

def _brute_strong(V, W, depth):
    """All unions of two neighbouring dyadic intervals (cyclically) on a uniform grid."""
    best = 0.0
    for lev in range(depth + 1):
        v, w = V.averages(lev), W.averages(lev)
        cands_v = [v, 0.5 * (v + np.roll(v, -1, axis=0))]
        cands_w = [w, 0.5 * (w + np.roll(w, -1, axis=0))]
        for cv, cw in zip(cands_v, cands_w):
            best = max(best, float(mat2.pair_char_arrays(cv, cw).max()))
    return best


def test_strong_dyadic_identity():
    one = PiecewiseFn.constant(np.array([1.0, 0.0, 1.0]), 3)
    assert strong_dyadic_A2(one, one) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(4))
def test_strong_dyadic_matches_uniform_scan(seed):
    rng = np.random.default_rng(seed)
    d = 6
    phi = rng.uniform(0, np.pi, 2 ** d)
    lam = np.exp(rng.uniform(-2, 2, (2 ** d, 2)))
    W = PiecewiseFn(d, UNIT, mat2.sym_from_frame(phi, lam[:, 0], lam[:, 1]))
    V = PiecewiseFn(d, UNIT, mat2.sym_inv(W.values))
    assert strong_dyadic_A2(V, W) == pytest.approx(_brute_strong(V, W, d), rel=1e-12)


def test_strong_dyadic_on_adaptive_partition():
    m = build_weight(ConstructionParams(Q=16, delta0=1e-3, n_max=2))
    W, V = m.materialize()
    pw, pv = PieceFn.from_fn(W), PieceFn.from_fn(V)
    assert strong_dyadic_A2(pv, pw) == pytest.approx(_brute_strong(V, W, W.depth), rel=1e-12)
    assert dyadic_A2_pieces(pv, pw) == pytest.approx(m.dyadic_A2(), rel=1e-9)


def test_sampled_bounded_by_sixteen_strong():
    m = build_weight(ConstructionParams(Q=16, delta0=1e-3, n_max=2))
    W, V = m.materialize()
    sd = strong_dyadic_A2(V, W)
    assert sampled_A2(V, W, 5000, seed=1) <= 16 * sd


def test_defect_zero_for_inverse_pair():
    m = build_weight(ConstructionParams(Q=16, delta0=1e-3, n_max=2))
    W, V = m.materialize()
    measure, worst = defect(PieceFn.from_fn(W), PieceFn.from_fn(V))
    assert measure == 0 and worst < 1e-9


# --- repair rounds -------------------------------------------------------------

@pytest.fixture(scope="module")
def remodeled():
    m = build_weight(ConstructionParams(Q=16, delta0=1e-3, n_max=2))
    return m, remodel_weights(m, 4, iterations=4)


def test_remodel_a2_bounded(remodeled):
    m, res = remodeled
    for r in res.rounds:
        assert r.strong_dyadic_A2 <= 16 * 16
        assert r.hypothesis_max <= 16 * (1 + 1e-10)


def test_exceptional_measure_recursion(remodeled):
    # order-1 cells halve; order-2 cells get half their own plus a quarter of
    # the order-1 repairs that reach order 2 (half of them for this model)
    _, res = remodeled
    a = [r.by_order.get(1, 0.0) for r in res.rounds]
    b = [r.by_order.get(2, 0.0) for r in res.rounds]
    for m in range(len(a) - 1):
        assert a[m + 1] == pytest.approx(a[m] / 2)
        assert b[m + 1] == pytest.approx(b[m] / 2 + a[m] / 8)
    assert res.rounds[-1].defect_measure < res.rounds[0].defect_measure


def test_untouched_cells_keep_quasi_periodized_values(remodeled):
    m, res = remodeled
    base = remodel_weights(m, 4, iterations=0, track_a2=False)
    # pieces of round 0 that were never exceptional stay as they were
    exc = {(I.level, I.index) for _, I, _ in base.book.exceptional()}
    for key, val in base.W.pieces.items():
        if key not in exc:
            assert np.array_equal(res.W.pieces[key], val)


# --- transference ---------------------------------------------------------------

def test_transference_half_constants_exact():
    f = PiecewiseFn(1, UNIT, np.array([2.0, -1.0]))
    g = PiecewiseFn(1, UNIT, np.array([0.5, 3.0]))
    for row in transference_experiment(f, g, (3, 5, 7), leakage=False):
        assert row.abs_err <= 1e-12


def test_transference_haar_pair_decreases():
    f = haar_function(UNIT.plus, depth=2, normalized=False)
    g = haar_function(UNIT.minus, depth=2, normalized=False)
    rows = transference_experiment(f, g, (3, 5, 7))
    errs = [r.abs_err for r in rows]
    leak = [r.leakage for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert leak[0] > leak[1] > leak[2]
