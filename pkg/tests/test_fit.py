import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from a2lab.fit import fit_exponent, local_slopes

xs = [8, 16, 32, 64]


def test_exact_power():
    f = fit_exponent([(x, x ** 1.5) for x in xs])
    assert f.slope == pytest.approx(1.5, abs=1e-12)
    assert f.residual_std < 1e-12


def test_linear():
    assert fit_exponent([(x, 3.0 * x) for x in xs]).slope == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 10_000))
def test_noisy_power_in_interval(seed):
    rng = np.random.default_rng(seed)
    grid = np.geomspace(4, 256, 12)
    f = fit_exponent([(x, x ** 1.5 * (1 + 0.01 * e)) for x, e in zip(grid, rng.standard_normal(12))])
    assert abs(f.slope - 1.5) < 0.02
    assert f.ci[0] < f.slope < f.ci[1]


def test_interval_coverage():
    # roughly 95% of noisy fits should cover the true slope
    rng = np.random.default_rng(0)
    grid = np.geomspace(4, 256, 8)
    hits = sum(fit_exponent([(x, x ** 1.5 * np.exp(0.05 * e)) for x, e in zip(grid, rng.standard_normal(8))])
               .contains(1.5) for _ in range(400))
    assert 0.91 <= hits / 400 <= 0.99


def test_errors():
    with pytest.raises(ValueError):
        fit_exponent([(1, 1), (2, 2)])
    with pytest.raises(ValueError):
        fit_exponent([(4, 1), (4, 2), (4, 3)])
    with pytest.raises(ValueError):
        fit_exponent([(1, 1), (2, -2), (3, 3)])


def test_local_slopes():
    assert np.allclose(local_slopes(xs, [x ** 2 for x in xs]), 2.0)


def test_predict():
    f = fit_exponent([(x, 2 * x ** 0.5) for x in xs])
    assert f.predict(100) == pytest.approx(20.0)
