"""Natural cubic splines with differentiable evaluation.

The second derivatives at the knots are a linear function of the knot
values (a tridiagonal solve with zero curvature at both endpoints), so the
whole fit is expressed as a single constant matrix applied to the values.
When the values are autodiff tensors, evaluation and its time derivative
stay differentiable with respect to them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def natural_spline_matrix(times: tuple[float, ...]) -> np.ndarray:
    """Matrix S with second_derivs = S @ values for the given knot times."""
    t = np.asarray(times, dtype=np.float64)
    n = t.size
    if n < 2:
        raise ValueError("need at least two knots")
    if n == 2:
        return np.zeros((2, 2))
    h = np.diff(t)
    lhs = np.zeros((n, n))
    rhs = np.zeros((n, n))
    lhs[0, 0] = 1.0
    lhs[n - 1, n - 1] = 1.0
    for i in range(1, n - 1):
        lhs[i, i - 1] = h[i - 1] / 6.0
        lhs[i, i] = (h[i - 1] + h[i]) / 3.0
        lhs[i, i + 1] = h[i] / 6.0
        rhs[i, i - 1] = 1.0 / h[i - 1]
        rhs[i, i] = -1.0 / h[i - 1] - 1.0 / h[i]
        rhs[i, i + 1] = 1.0 / h[i]
    return np.linalg.solve(lhs, rhs)


@lru_cache(maxsize=64)
def uniform_spline_matrix(n_knots: int) -> np.ndarray:
    """Cached fit matrix for knots at 0, 1, ..., n-1."""
    return natural_spline_matrix(tuple(float(i) for i in range(n_knots)))


@dataclass
class CubicSpline:
    """Knot times plus values and second derivatives per channel."""

    times: np.ndarray          # (n,)
    values: Tensor             # (n, d)
    second_derivs: Tensor      # (n, d)

    @property
    def n_knots(self) -> int:
        return self.times.size

    @property
    def coefficients(self) -> np.ndarray:
        """Per-interval cubics as (n-1, 4, d): value, slope, 1/2 curv, jerk."""
        t = self.times
        y = self.values.data if isinstance(self.values, Tensor) else self.values
        m = (
            self.second_derivs.data
            if isinstance(self.second_derivs, Tensor)
            else self.second_derivs
        )
        h = np.diff(t)[:, None]
        a = y[:-1]
        b = (y[1:] - y[:-1]) / h - h * (2.0 * m[:-1] + m[1:]) / 6.0
        c = m[:-1] / 2.0
        d = (m[1:] - m[:-1]) / (6.0 * h)
        return np.stack([a, b, c, d], axis=1)


def fit_spline(times, values) -> CubicSpline:
    """Natural cubic interpolant of (n, d) values at strictly increasing times."""
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("need at least two knot times")
    if np.any(np.diff(t) <= 0):
        raise ValueError("knot times must be strictly increasing")
    vals = values if isinstance(values, Tensor) else Tensor(values)
    if vals.ndim != 2 or vals.shape[0] != t.size:
        raise ValueError("values must be (n_knots, d)")
    smat = natural_spline_matrix(tuple(t.tolist()))
    second = ad.matmul(Tensor(smat), vals)
    return CubicSpline(times=t, values=vals, second_derivs=second)


def _locate(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t, side="right")) - 1
    return min(max(i, 0), times.size - 2)


def eval_spline(spline: CubicSpline, t: float) -> Tensor:
    """Value of the interpolant at scalar time t (clamped to the knot span)."""
    i = _locate(spline.times, t)
    t0, t1 = spline.times[i], spline.times[i + 1]
    h = t1 - t0
    u = t - t0
    v = t1 - t
    y0, y1 = spline.values[i], spline.values[i + 1]
    m0, m1 = spline.second_derivs[i], spline.second_derivs[i + 1]
    out = ad.add(ad.mul(y0, v / h), ad.mul(y1, u / h))
    out = ad.add(out, ad.mul(m0, v**3 / (6.0 * h) - v * h / 6.0))
    out = ad.add(out, ad.mul(m1, u**3 / (6.0 * h) - u * h / 6.0))
    return out


def eval_spline_deriv(spline: CubicSpline, t: float) -> Tensor:
    """Analytic time derivative of the interpolant at scalar time t."""
    i = _locate(spline.times, t)
    t0, t1 = spline.times[i], spline.times[i + 1]
    h = t1 - t0
    u = t - t0
    v = t1 - t
    y0, y1 = spline.values[i], spline.values[i + 1]
    m0, m1 = spline.second_derivs[i], spline.second_derivs[i + 1]
    out = ad.mul(ad.sub(y1, y0), 1.0 / h)
    out = ad.add(out, ad.mul(m0, -v * v / (2.0 * h) + h / 6.0))
    out = ad.add(out, ad.mul(m1, u * u / (2.0 * h) - h / 6.0))
    return out


def deriv_weights(h: float, u: float) -> tuple[float, float, float]:
    """Scalar weights (on M_i, M_{i+1}, y_{i+1}-y_i) of the derivative at
    offset u inside an interval of width h. Used by the batched CDE path."""
    v = h - u
    return (-v * v / (2.0 * h) + h / 6.0, u * u / (2.0 * h) - h / 6.0, 1.0 / h)
