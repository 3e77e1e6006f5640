import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from a2lab.dyadic import UNIT, DyadicInterval, PiecewiseFn, haar_function, inner
from a2lab.operators import (LeafTiling, WeightedOperator, apply_paraproduct, apply_shift, haar_shift, hdy,
                             make_operator, odd_s0, single_family, sparse_operator, square_function_norm,
                             stopping_family, stopping_terminal_family, support_family, weighted_norm,
                             weighted_pairing, witness)

vec6 = arrays(float, (64, 2), elements=st.floats(-10, 10))


def test_paraproduct_of_zero(model4):
    f = PiecewiseFn.constant(np.zeros(2), 7)
    assert np.all(apply_paraproduct(f, model4).values == 0)


def test_paraproduct_single_interval():
    I = DyadicInterval(2, 1)
    out = apply_paraproduct(PiecewiseFn.constant(3.0, 4), single_family(I))
    expect = 3.0 * haar_function(I, depth=out.depth, normalized=False).values
    assert np.allclose(out.values, expect)


@given(arrays(float, 64, elements=st.floats(-10, 10)))
def test_paraproduct_matches_direct_averages(v):
    f = PiecewiseFn(6, UNIT, v)
    fam = (DyadicInterval(0, 0), DyadicInterval(2, 1), DyadicInterval(2, 3), DyadicInterval(4, 9))
    from a2lab.operators import SparseFamily
    out = apply_paraproduct(f, SparseFamily("x", fam, (0,) * 4, 2.0))
    expect = np.zeros(64)
    for I in fam:
        expect += f.average_on(I) * haar_function(I, depth=6, normalized=False).values
    assert np.allclose(out.values, expect, atol=1e-12)


def test_family_carleson_constants(model16):
    assert stopping_family(model16).is_carleson()
    assert stopping_terminal_family(model16).is_carleson()
    assert support_family(model16).is_carleson()


def test_odd_shift_on_level_one_haar():
    h = haar_function(UNIT.plus, depth=4)
    out = apply_shift("S_odd", h)
    d = out.depth
    expect = haar_function(UNIT.plus.plus, depth=d).values - haar_function(UNIT.plus.minus, depth=d).values
    assert np.allclose(out.values, expect)


def test_s0_kills_level_one_haar():
    h = haar_function(UNIT.plus, depth=4)
    assert np.allclose(apply_shift("S0_odd", h).values, 0)


def _coef_matrix(T, depth):
    """Matrix of ``T`` in the orthonormal Haar basis, computed by pairing."""
    basis = [haar_function(DyadicInterval(l, j), depth=depth) for l in range(depth) for j in range(2 ** l)]
    return np.array([[inner(T.apply(b), c) for b in basis] for c in basis])


def test_shift_adjoint_is_transpose():
    S = haar_shift(5, "odd")
    assert np.allclose(_coef_matrix(S.adjoint(), 5), _coef_matrix(S, 5).T, atol=1e-12)


def test_hdy_is_antisymmetric():
    H = hdy(5, 0.5, 0.2)
    M = _coef_matrix(H, 5)
    assert np.allclose(M, -M.T, atol=1e-12)
    S0 = _coef_matrix(odd_s0(5), 5)
    assert np.allclose(S0, -S0.T, atol=1e-12)


def test_sha_on_witness_equals_sparse(model16):
    W, V = model16.materialize()
    f = witness(model16, "a0+b0", (W, V))
    full = make_operator("sha", W.depth).apply(f)
    sparse = make_operator("sha_sparse", model=model16).apply(f)
    full, sparse = (x.refine(max(full.depth, sparse.depth)) for x in (full, sparse))
    assert np.abs(full.values - sparse.values).max() <= 1e-9 * np.abs(full.values).max()


def test_weighted_pairing_trivial():
    f = PiecewiseFn.constant(np.array([1.0, 0.0]))
    assert weighted_pairing(np.eye(2), f, f) == pytest.approx(1.0)
    g = PiecewiseFn.constant(np.array([1.0, 1.0]))
    assert weighted_pairing(np.diag([2.0, 3.0]), g, g) == pytest.approx(5.0)


@given(vec6, vec6)
def test_weighted_pairing_midpoint_rule(a, b):
    rng = np.random.default_rng(0)
    L = rng.standard_normal((16, 2, 2))
    Wfull = L @ L.transpose(0, 2, 1) + np.eye(2)
    W = PiecewiseFn(4, UNIT, np.stack([Wfull[:, 0, 0], Wfull[:, 0, 1], Wfull[:, 1, 1]], -1))
    f, g = PiecewiseFn(6, UNIT, a), PiecewiseFn(6, UNIT, b)
    # midpoint rule on 4x finer samples
    x = (np.arange(256) + 0.5) / 256
    Wx, fx, gx = Wfull[(x * 16).astype(int)], a[(x * 64).astype(int)], b[(x * 64).astype(int)]
    quad = np.einsum("nij,nj,ni->", Wx, fx, gx) / 256
    assert weighted_pairing(W, f, g) == pytest.approx(quad, rel=1e-12, abs=1e-9)


def test_square_function_trivial():
    f = PiecewiseFn.constant(np.array([1.0, 0.0]), 1)
    fam = single_family(UNIT)
    assert square_function_norm(fam, np.eye(2), f) == pytest.approx(1.0)
    assert square_function_norm(fam, np.eye(2), PiecewiseFn.constant(np.zeros(2), 1)) == 0


def test_weighted_operator_norm_matches_dense(model4):
    W, V = model4.materialize()
    T = sparse_operator("pi", model4)
    tiling = LeafTiling(W, [support_family(model4)])
    A = WeightedOperator(T, tiling)
    dense = np.column_stack([A.matvec(e) for e in np.eye(2 * len(tiling))])
    assert A.norm() == pytest.approx(np.linalg.norm(dense, 2), rel=1e-8)
    # the witness lower-bounds the norm
    f = witness(model4, "a0", (W, V))
    ratio = weighted_norm(W, T.apply(f)) / weighted_norm(W, f)
    assert ratio <= A.norm() * (1 + 1e-9)


def test_tiling_sample_round_trip(model4):
    W, V = model4.materialize()
    tiling = LeafTiling(W, [support_family(model4)])
    f = witness(model4, "a0", (W, V))
    back = tiling.to_fn(tiling.sample(f))
    assert np.allclose(back.refine(f.depth).values, f.values)


def test_square_function_grows_at_most_linearly():
    from a2lab.fit import fit_exponent
    from a2lab.forge import ConstructionParams, build_weight
    from a2lab.operators import square_function_estimate
    pts = []
    for Q in (4, 8, 16, 32):
        m = build_weight(ConstructionParams(Q=Q, delta0=1e-3, n_max=4))
        pts.append((Q, square_function_estimate(m, n_tests=16)["norm"]))
    assert fit_exponent(pts).slope <= 1.15
