import numpy as np
import pytest

from a2lab.forge import ConstructionParams, build_weight
from a2lab.operators import apply_paraproduct, haar_shift, sparse_operator, weighted_norm, weighted_pairing, witness
from a2lab.paraproduct import (BudgetError, companion_norms, even_shift_diagnostics, lower_bound_diagnostics,
                               lower_bound_direct, odd_shift_norms, pi_pistar_pairing, pi_quadratic_bruteforce,
                               pi_quadratic_fast)


def _model(Q, n_max, delta0=1e-3, rotate=True):
    return build_weight(ConstructionParams(Q=Q, delta0=delta0, n_max=n_max, rotate=rotate))


@pytest.mark.parametrize("b", ["a0", "a0+b0"])
def test_bruteforce_matches_materialized_quadrature(b):
    m = _model(4, 4)
    W, V = m.materialize()
    f = witness(m, b, (W, V))
    pf = apply_paraproduct(f, m)
    direct = weighted_pairing(W, pf, pf)
    rep = pi_quadratic_bruteforce(m, b)
    assert rep.total == pytest.approx(direct, rel=1e-10)
    assert rep.f_norm2 == pytest.approx(weighted_pairing(W, f, f), rel=1e-10)


@pytest.mark.parametrize("Q,n_max", [(4, 8), (16, 8), (8, 5), (64, 7)])
@pytest.mark.parametrize("b", ["a0", "a0+b0"])
def test_fast_matches_bruteforce(Q, n_max, b):
    m = _model(Q, n_max)
    fast, brute = pi_quadratic_fast(m, b, pairs=True), pi_quadratic_bruteforce(m, b)
    assert fast.total == pytest.approx(brute.total, rel=1e-9)
    assert np.allclose(fast.pairs, brute.pairs, rtol=1e-9, atol=1e-12 * abs(brute.total))


def test_bruteforce_budget():
    with pytest.raises(BudgetError):
        pi_quadratic_bruteforce(_model(16, 30))


@pytest.mark.parametrize("method", [pi_quadratic_fast, pi_quadratic_bruteforce])
def test_no_rotation_has_no_offdiagonal(method):
    rep = method(_model(16, 6, rotate=False))
    assert rep.offdiag == 0
    assert rep.total == rep.diagonal


def test_offdiagonal_pairs_nonnegative():
    rep = pi_quadratic_fast(_model(16, 12), pairs=True)
    assert np.all(rep.pairs >= 0)


def test_generation_blocks_scale_self_similarly():
    # each (n, k) block maps to (n+1, k+1) by the factor r/2
    Q = 16
    rep = pi_quadratic_fast(_model(Q, 14), pairs=True)
    r = 2 - 1 / Q
    P = rep.pairs
    for n in range(4, 9):
        for k in range(n + 1, n + 4):
            assert P[n + 1, k + 1] / P[n, k] == pytest.approx(r / 2, rel=1e-6)
    d = rep.per_generation
    assert d[6] / d[5] == pytest.approx(r / 2, rel=1e-6)


def test_fast_reaches_large_depth():
    rep = pi_quadratic_fast(_model(64, 1024))
    assert np.isfinite(rep.ratio) and rep.ratio > 1


@pytest.mark.parametrize("Q", [16, 64])
def test_pairing_nonpositive(Q):
    rep = pi_pistar_pairing(_model(Q, 8))
    assert rep.pairing <= 0
    assert rep.diff_norm2 >= rep.pi_norm2
    # diagonal factors: <W hat h><W^-1 hat h> = kappa Id with kappa < 0 makes g01 >= 0
    assert all(k < 0 for k in rep.diagonal_factors)
    assert rep.g01 >= 0


def test_pairing_matches_materialized():
    m = _model(16, 4)
    W, V = m.materialize()
    f = witness(m, "a0", (W, V))
    Pi = sparse_operator("pi", m)
    pf, psf = Pi.apply(f), Pi.adjoint().apply(f)
    rep = pi_pistar_pairing(m)
    assert rep.pairing == pytest.approx(weighted_pairing(W, pf, psf), rel=1e-9)
    assert rep.pistar_norm2 == pytest.approx(weighted_pairing(W, psf, psf), rel=1e-9)


def test_pairing_without_rotation_is_diagonal_only():
    m = _model(16, 5, rotate=False)
    rep = pi_pistar_pairing(m)
    # the two half-groups cancel, the nested group vanishes, the diagonal survives
    assert rep.g02 + rep.g03 == pytest.approx(0.0, abs=1e-12 * rep.g01)
    assert rep.g04 == 0
    assert rep.pairing == pytest.approx(-rep.g01, rel=1e-12)
    assert rep.pairing < 0
    W, V = m.materialize()
    f = witness(m, "a0", (W, V))
    Pi = sparse_operator("pi", m)
    assert rep.pairing == pytest.approx(weighted_pairing(W, Pi.apply(f), Pi.adjoint().apply(f)), rel=1e-9)


@pytest.mark.parametrize("b", ["a0", "a0+b0"])
def test_companion_norms_match_materialized(b):
    m = _model(16, 4)
    W, V = m.materialize()
    f = witness(m, b, (W, V))
    nf = weighted_norm(W, f)
    fast = companion_norms(m, b)
    for kind in ("pi", "pi1", "pi2", "pi3", "S_L", "S_L_adjoint"):
        direct = weighted_norm(W, sparse_operator(kind, m).apply(f)) / nf
        assert fast[kind] == pytest.approx(direct, rel=1e-9), kind


@pytest.mark.parametrize("Q,n_max", [(4, 3), (16, 5)])
def test_odd_shift_norms_match_materialized(Q, n_max):
    m = _model(Q, n_max)
    W, V = m.materialize()
    f = witness(m, "a0", (W, V))
    S = haar_shift(W.depth, "odd")
    Sf, Ssf = S.apply(f), S.adjoint().apply(f)
    rep = odd_shift_norms(m)
    assert rep.s_norm2 == pytest.approx(weighted_pairing(W, Sf, Sf), rel=1e-10)
    assert rep.sstar_norm2 == pytest.approx(weighted_pairing(W, Ssf, Ssf), rel=1e-10)
    assert rep.cross == pytest.approx(weighted_pairing(W, Sf, Ssf), rel=1e-10)


def test_lower_bound_residual_and_oracle():
    m = _model(16, 6)
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(0, 4))
        k = int(rng.integers(n + 1, 6))
        pI = tuple(rng.choice([-1, 1], n))
        pJ = pI + tuple(rng.choice([-1, 1], k - n))
        I, J = m.node(pI), m.node(pJ)
        d = lower_bound_diagnostics(m, I, J)
        assert d["exact"] == pytest.approx(lower_bound_direct(m, I, J), rel=1e-9)
        assert d["C"] <= 5
        assert abs(d["t_ratio"] - 1) < 0.1


def test_lower_bound_without_rotation():
    m = _model(16, 4, rotate=False)
    d = lower_bound_diagnostics(m, m.node(()), m.node((1, -1)))
    assert d["s_J"] == 0 and d["t_J"] == 0 and d["main"] == 0


def test_even_shift_regrouping():
    m = _model(16, 6)
    for k in range(5):
        d = even_shift_diagnostics(m, k, phi=0.2)
        assert d["stop_err"] < 1e-8 and d["term_err"] < 1e-8 and d["whole_err"] < 1e-8
