"""Power-law exponents from log-log least squares."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    ci: tuple[float, float]
    residual_std: float
    n: int

    def contains(self, x: float) -> bool:
        return self.ci[0] <= x <= self.ci[1]

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope


def fit_exponent(points, level: float = 0.95) -> ExponentFit:
    """Fit ``y = C x^slope``; the interval uses the t distribution on the residuals."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (x, y) pairs")
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    if np.any(pts <= 0):
        raise ValueError("x and y must be positive")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("degenerate x grid")
    res = stats.linregress(lx, ly)
    n = len(pts)
    resid = ly - (res.intercept + res.slope * lx)
    s = float(np.sqrt(np.sum(resid ** 2) / (n - 2)))
    half = float(stats.t.ppf(0.5 + level / 2, n - 2) * res.stderr)
    return ExponentFit(float(res.slope), float(res.intercept), (res.slope - half, res.slope + half), s, n)


def local_slopes(xs, ys) -> np.ndarray:
    """Consecutive log-log slopes."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return np.diff(ly) / np.diff(lx)
