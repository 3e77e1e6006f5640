import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from a2lab import mat2
from a2lab.forge import (ConstructionError, ConstructionParams, build_weight, default_delta0, default_nmax,
                         rotation_step, stretch_step)
from a2lab.mat2 import DomainError, Spectral2


def test_rotation_step_worked_example():
    v = Spectral2(0.0, 2, 1)
    w = Spectral2(0.0, 2, 1)       # (beta#, alpha#) on (a, b)
    vp, vm, wp, wm = rotation_step(v, w, 0.1)
    assert float(vp.lam_a) == pytest.approx(1.995 / 0.995, rel=1e-14)
    assert float(vp.lam_b) == pytest.approx(0.99 / 0.995, rel=1e-14)
    theta = math.atan(0.1 * math.sqrt(0.5))
    assert vp.phi == pytest.approx(theta, rel=1e-14)
    assert vm.phi == pytest.approx(-theta, rel=1e-14)


@given(st.floats(0, 3), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.01, 0.3))
def test_rotation_step_midpoints(phi, log_ratio, scale, q):
    alpha, beta = scale * math.exp(log_ratio), scale
    v = Spectral2(phi, alpha, beta)
    w = Spectral2(phi, 1 / beta, 1 / alpha)
    vp, vm, wp, wm = rotation_step(v, w, q)
    for parent, (a, b) in ((v, (vp, vm)), (w, (wp, wm))):
        mid = (a.to_sym().to_array() + b.to_sym().to_array()) / 2
        ref = parent.to_sym().to_array()
        assert np.abs(mid - ref).max() <= 1e-14 * np.abs(ref).max() * 10


def test_rotation_step_needs_ordered_axes():
    with pytest.raises(DomainError):
        rotation_step(Spectral2(0, 1, 2), Spectral2(0, 1, 1), 0.1)


def test_stretch_step_worked_example():
    (xp, yp), (xm, ym) = stretch_step(1.0, 2.0, 1.0, 2.0)
    assert (xp, yp) == pytest.approx((1.5, 4 / 3))
    assert (xm, ym) == pytest.approx((0.5, 8 / 3))
    assert xp * yp == pytest.approx(2.0)
    assert 1 <= xm * ym <= 2
    assert (xp + xm) / 2 == pytest.approx(1.0) and (yp + ym) / 2 == pytest.approx(2.0)


def test_stretch_step_rejects_bad_s():
    with pytest.raises(DomainError):
        stretch_step(1.0, 1.6, 0.8, 2.0)


def test_params_validation():
    with pytest.raises(DomainError):
        ConstructionParams(Q=2, delta0=1e-3, n_max=2)
    with pytest.raises(DomainError):
        ConstructionParams(Q=16, delta0=0.5, n_max=2)
    assert ConstructionParams(Q=1, delta0=1e-3, n_max=1, rotate=False).r == 1.0


def test_defaults():
    assert default_nmax(8) == 128
    assert default_delta0(16) == 1e-3
    assert default_delta0(10_000) == pytest.approx(5e-4)


def test_table_products_and_stretch():
    m = build_weight(ConstructionParams(Q=4, delta0=0.01, n_max=2))
    for row in m.table.rows:
        assert float(row["alpha"] * row["beta_s"]) == pytest.approx(4, rel=1e-12)
        assert float(row["alpha_s"] * row["beta"]) == pytest.approx(4, rel=1e-12)
    s = [float(r["s"]) for r in m.table.rows[:-1]]
    assert all(0.985 <= x <= 1.0 for x in s)


def test_generation_checks(model16):
    g = model16.generation_checks()
    assert g["martingale"] < 1e-12
    assert g["product"] < 1e-12 and g["c_ratio"] < 1e-12
    assert g["lmi"] <= 1e-12
    assert g["alpha_growth"] < 1 + 1e-12 and g["beta_decay"] < 1 + 1e-12
    assert g["angle_ratio"] <= 1


def test_leafwise_product_is_identity(model4):
    W, V = model4.materialize()
    prod = np.einsum("nij,njk->nik", _full(W.values), _full(V.values))
    assert np.abs(prod - np.eye(2)).max() <= 1e-10


def _full(p):
    return np.stack([np.stack([p[:, 0], p[:, 1]], -1), np.stack([p[:, 1], p[:, 2]], -1)], -2)


def test_materialized_averages_follow_tree(model4):
    # the root averages of the materialized leaves are the seed averages
    W, V = model4.materialize()
    V0, W0 = model4.stopping_avg(0)
    assert np.allclose(W.mean(), W0.to_sym().packed, rtol=1e-10)
    assert np.allclose(V.mean(), V0.to_sym().packed, rtol=1e-10)


def test_identity_weight_has_a2_one():
    m = build_weight(ConstructionParams(Q=1, delta0=1e-3, n_max=3, rotate=False))
    assert m.dyadic_A2() == pytest.approx(1.0, abs=1e-12)


def test_dyadic_a2_bounded():
    m = build_weight(ConstructionParams(Q=16, delta0=1e-3, n_max=6))
    assert m.dyadic_A2() <= 16 * (1 + 1e-10)


@pytest.mark.parametrize("Q,n_max", [(4, 2), (16, 3), (8, 4)])
def test_dyadic_a2_matches_exhaustive_scan(Q, n_max):
    m = build_weight(ConstructionParams(Q=Q, delta0=1e-3, n_max=n_max))
    W, V = m.materialize()
    best = 0.0
    for lev in range(W.depth + 1):
        best = max(best, float(mat2.pair_char_arrays(V.averages(lev), W.averages(lev)).max()))
    assert m.dyadic_A2() == pytest.approx(best, rel=1e-9)


def test_lmi_on_nodes(model16):
    for n in range(model16.n_max + 1):
        V, W = model16.stopping_avg(n)
        assert mat2.loewner_leq(W.to_sym().inv(), V.to_sym(), tol=1e-9)


def test_extended_range_beyond_doubles():
    # very deep models leave double range; the table stays in mpmath
    m = build_weight(ConstructionParams(Q=64, delta0=1e-3, n_max=1024))
    assert m.table.rows[-1]["alpha"] > mpmath.mpf(10) ** 300
    assert m.dyadic_A2() <= 64 * (1 + 1e-10)


def test_no_rotation_variant_keeps_frame():
    m = build_weight(ConstructionParams(Q=16, delta0=1e-3, n_max=3, rotate=False))
    assert np.all(m.stopping_angles(3) == 0)
    with pytest.raises(ConstructionError):
        build_weight(ConstructionParams(Q=16, delta0=0.1, n_max=3, q=20))
