import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from a2lab.dyadic import UNIT, DyadicInterval, PiecewiseFn, affine_pullback, haar_function
from a2lab.kernels import (C0_EXACT, TruncationError, coefficient_matrix, compute_constants, expected_matrix,
                           hilbert_line, htvsdyadic_check, pairing_circle, pairing_line, ran_delta2)


@pytest.fixture(scope="module")
def kc():
    return compute_constants()


def ind(I, depth=None):
    vals = np.zeros(2 ** (depth or I.level))
    span = 2 ** ((depth or I.level) - I.level)
    vals[I.index * span:(I.index + 1) * span] = 1
    return PiecewiseFn(depth or I.level, UNIT, vals)


def test_line_pairing_of_halves():
    assert pairing_line(ind(UNIT.plus), ind(UNIT.minus)) == pytest.approx(-math.log(2) / math.pi, abs=1e-15)


@given(arrays(float, 8, elements=st.floats(-5, 5)))
def test_line_pairing_antisymmetric(v):
    f = PiecewiseFn(3, UNIT, v)
    assert abs(pairing_line(f, f)) <= 1e-12 * max(1.0, np.sum(v ** 2))


def _pv_hilbert(f: PiecewiseFn, s: float) -> float:
    """``(1/pi) p.v. int f(y)/(s-y) dy`` cell by cell with QUADPACK's Cauchy weight."""
    edges = f.cell_edges()
    tot = 0.0
    for a, b, v in zip(edges[:-1], edges[1:], f.values):
        if v == 0:
            continue
        if a < s < b:
            tot -= v * integrate.quad(lambda y: 1.0, a, b, weight="cauchy", wvar=s)[0]
        else:
            tot += v * integrate.quad(lambda y: 1.0 / (s - y), a, b)[0]
    return tot / math.pi


def test_line_pairing_matches_pv_quadrature():
    rng = np.random.default_rng(7)
    for _ in range(3):
        f = PiecewiseFn(2, UNIT, rng.standard_normal(4))
        g = PiecewiseFn(2, DyadicInterval(0, 0), rng.standard_normal(4))
        pts = list(f.cell_edges())
        quad = 0.0
        for a, b, v in zip(g.cell_edges()[:-1], g.cell_edges()[1:], g.values):
            inner_pts = [p for p in pts if a < p < b]
            quad += v * integrate.quad(lambda s: _pv_hilbert(f, s), a, b, points=inner_pts or None,
                                       limit=200, epsabs=1e-10)[0]
        assert pairing_line(f, g) == pytest.approx(quad, abs=1e-6)


def test_hilbert_line_of_indicator():
    s = np.array([-0.5, 0.25, 2.0])
    expect = np.log(np.abs(s / (s - 1))) / math.pi
    assert np.allclose(hilbert_line(ind(UNIT), s)[:, 0], expect)


def _fourier_pairing(f: PiecewiseFn, g: PiecewiseFn, K: int) -> float:
    """``sum_{0<|k|<=K} -i sgn(k) f^(k) conj(g^(k))`` with exact cell transforms."""
    k = np.arange(1, K + 1)

    def coeffs(u):
        x = (u.cell_edges() - float(u.origin.left)) / u.origin.length
        e = np.exp(-2j * np.pi * np.outer(k, x))
        return ((e[:, :-1] - e[:, 1:]) / (2j * np.pi * k[:, None])) @ u.values

    fk, gk = coeffs(f), coeffs(g)
    # negative frequencies are conjugates for real inputs
    return float(2 * np.real(np.sum(-1j * fk * np.conj(gk))))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_circle_pairing_matches_fourier_series(seed):
    rng = np.random.default_rng(seed)
    f = PiecewiseFn(3, UNIT, rng.standard_normal(8))
    g = PiecewiseFn(3, UNIT, rng.standard_normal(8))
    K = 2 ** 12
    trunc = pairing_circle(f, g, K)
    assert trunc.value == pytest.approx(_fourier_pairing(f, g, K), abs=1e-12)
    exact = pairing_circle(f, g, None)
    assert abs(exact.value - trunc.value) <= trunc.error_bound


def test_circle_constant_is_annihilated():
    g = PiecewiseFn(2, UNIT, np.array([1.0, -2.0, 0.5, 3.0]))
    assert pairing_circle(PiecewiseFn.constant(1.0, 2), g, None).value == pytest.approx(0.0, abs=1e-15)


def test_circle_scale_invariance():
    f, g = haar_function(UNIT.plus, depth=2), haar_function(UNIT.minus, depth=2)
    I = DyadicInterval(1, 0)
    a = pairing_circle(f, g, None).value
    b = pairing_circle(affine_pullback(f, I), affine_pullback(g, I), None).value
    assert a == b


def test_truncations_agree_within_bound():
    f, g = haar_function(UNIT, depth=2), haar_function(UNIT.plus, depth=2)
    lo, hi = pairing_circle(f, g, 2 ** 14), pairing_circle(f, g, 2 ** 16)
    assert abs(lo.value - hi.value) <= lo.error_bound


def test_truncation_error_names_needed_k():
    f, g = haar_function(UNIT, depth=2), haar_function(UNIT.plus, depth=2)
    with pytest.raises(TruncationError, match="need K >="):
        pairing_circle(f, g, 16, tol=1e-9)


def test_constants(kc):
    assert abs(kc.c0 - C0_EXACT) <= 1e-10
    assert abs(kc.c1) > 0.05
    assert kc.c1_error <= 1e-6 and kc.c2_error <= 1e-6
    assert abs(kc.c1 - kc.c1_rotated) <= 1e-8
    # half-period rotation maps h_{I+} to h_{I-}, forcing c2 = 0
    assert abs(kc.c2) <= 1e-12


def test_constants_tolerance_floor():
    with pytest.raises(ValueError):
        compute_constants(tol=1e-9)


def test_dyadic_model_reproduces_circle_matrix(kc):
    for I in (UNIT, DyadicInterval(2, 1)):
        M = coefficient_matrix(I)
        assert np.abs(M - expected_matrix(kc.c1, kc.c2)).max() <= 1e-12


def test_haar_pair_gives_c1(kc):
    f = ran_delta2(UNIT, [1, 0, 0])
    g = ran_delta2(UNIT, [0, 0, 1])
    r = htvsdyadic_check(UNIT, f, g, kc)
    assert r["lhs"] == pytest.approx(kc.c1, abs=1e-6)
    assert r["rhs"] == pytest.approx(kc.c1, abs=1e-12)


def test_equal_arguments_give_zero(kc):
    f = ran_delta2(UNIT, [0.3, -1.2, 0.7])
    r = htvsdyadic_check(UNIT, f, f, kc)
    assert abs(r["lhs"]) <= 1e-12 and abs(r["rhs"]) <= 1e-12


@given(arrays(float, 3, elements=st.floats(-3, 3)), arrays(float, 3, elements=st.floats(-3, 3)),
       st.sampled_from([UNIT, DyadicInterval(3, 5), DyadicInterval(7, 100)]))
def test_circle_matches_dyadic_model_on_second_differences(a, b, I):
    kc = compute_constants()
    r = htvsdyadic_check(I, ran_delta2(I, a), ran_delta2(I, b), kc, K=None)
    assert r["deviation"] <= 1e-12 * max(1.0, np.abs(a).sum() * np.abs(b).sum())


def test_rejects_functions_outside_range(kc):
    with pytest.raises(ValueError):
        htvsdyadic_check(UNIT, PiecewiseFn.constant(1.0, 2), ran_delta2(UNIT, [1, 0, 0]), kc)
