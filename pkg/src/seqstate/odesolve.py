"""Fixed-step RK4 and adaptive Dormand-Prince (dopri5) initial value solvers.

``rk4_fixed`` accepts autodiff tensors and is differentiated by
backpropagating through its steps (discretize-then-differentiate).
``dopri5`` is numeric only; it adapts the step from the embedded 4th-order
error estimate under the usual atol/rtol control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


class OdeError(RuntimeError):
    pass


@dataclass
class OdeSolverConfig:
    method: str = "dopri5"
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 100_000
    rk4_steps: int = 32  # fixed step count for rk4_fixed over [t0, t1]

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.method not in ("rk4_fixed", "dopri5"):
            raise ValueError(f"unknown method {self.method!r}")


def ode_solve(f, y0, t0: float, t1: float, config: OdeSolverConfig | None = None):
    """Integrate dy/dt = f(t, y) from t0 to t1; returns y(t1)."""
    config = config or OdeSolverConfig()
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if config.method == "rk4_fixed":
        return rk4_solve(f, y0, t0, t1, config.rk4_steps)
    return _dopri5(f, y0, t0, t1, config)


def rk4_solve(f, y0, t0: float, t1: float, steps: int):
    """Classic fourth-order Runge-Kutta with ``steps`` equal steps.

    Works on numpy arrays or Tensors (differentiable in the latter case).
    """
    if steps < 1:
        raise ValueError("rk4 needs at least one step")
    h = (t1 - t0) / steps
    y = y0
    t = t0
    for _ in range(steps):
        k1 = f(t, y)
        k2 = f(t + h / 2.0, y + k1 * (h / 2.0))
        k3 = f(t + h / 2.0, y + k2 * (h / 2.0))
        k4 = f(t + h, y + k3 * h)
        y = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
        t += h
        data = y.data if isinstance(y, Tensor) else y
        if not np.all(np.isfinite(data)):
            raise OdeError(f"non-finite state at t={t}")
    return y


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def _dopri5(f, y0, t0: float, t1: float, config: OdeSolverConfig):
    if isinstance(y0, Tensor):
        raise OdeError("dopri5 is not differentiable; use rk4_fixed for training")
    y = np.asarray(y0, dtype=np.float64)
    t = t0
    h = (t1 - t0) / 100.0
    for _ in range(config.max_steps):
        if t >= t1:
            return y
        h = min(h, t1 - t)
        k = []
        for stage in range(7):
            yi = y.copy()
            for j, a in enumerate(_DP_A[stage]):
                if a != 0.0:
                    yi = yi + (h * a) * k[j]
            k.append(np.asarray(f(t + _DP_C[stage] * h, yi), dtype=np.float64))
        y5 = y + h * sum(b * ki for b, ki in zip(_DP_B5, k) if b != 0.0)
        y4 = y + h * sum(b * ki for b, ki in zip(_DP_B4, k) if b != 0.0)
        if not (np.all(np.isfinite(y5)) and np.all(np.isfinite(y4))):
            raise OdeError(f"non-finite state at t={t}")
        scale = config.atol + config.rtol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.sqrt(np.mean(((y5 - y4) / scale) ** 2)))
        if err <= 1.0:
            t += h
            y = y5
        factor = 0.9 * (1.0 / max(err, 1e-10)) ** 0.2
        h *= min(5.0, max(0.2, factor))
    raise OdeError(f"max_steps={config.max_steps} exceeded at t={t}")
