"""Fixed-step RK4 and adaptive Dormand-Prince solver checks."""

import numpy as np
import pytest

from seqstate import autodiff as ad
from seqstate.autodiff import Tensor, grad_check
from seqstate.odesolve import OdeError, OdeSolverConfig, ode_solve, rk4_solve


def _matrix_exp_series(a, tol=1e-16):
    """Taylor-series matrix exponential, the independent oracle."""
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, 60):
        term = term @ a / k
        out = out + term
        if np.abs(term).max() < tol:
            break
    return out


def test_zero_field_is_identity():
    y0 = np.array([1.5, -2.0])
    for method in ("rk4_fixed", "dopri5"):
        y1 = ode_solve(lambda t, y: np.zeros_like(y), y0, 0.0, 3.0,
                       OdeSolverConfig(method=method))
        np.testing.assert_allclose(y1, y0, atol=1e-14)


def test_exponential_growth_dopri5():
    y1 = ode_solve(lambda t, y: y, np.array([1.0]), 0.0, 1.0, OdeSolverConfig())
    assert abs(float(y1[0]) - np.e) < 1e-6


def test_linear_system_vs_matrix_exponential():
    rng = np.random.default_rng(0)
    for trial in range(5):
        a = 0.5 * rng.normal(size=(3, 3)) - 1.5 * np.eye(3)  # stable-ish
        y0 = rng.normal(size=3)
        want = _matrix_exp_series(a) @ y0
        got = ode_solve(lambda t, y: a @ y, y0, 0.0, 1.0, OdeSolverConfig())
        rel = np.abs(got - want).max() / max(np.abs(want).max(), 1e-12)
        assert rel < 1e-5


def test_rk4_observed_order_is_four():
    def err(steps):
        y = rk4_solve(lambda t, y: y, np.array([1.0]), 0.0, 1.0, steps)
        return abs(float(y[0]) - np.e)

    order = np.log2(err(16) / err(32))
    assert 3.7 <= order <= 4.3


def test_rk4_differentiable_through_solver():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 3)) * 0.3

    def f(y0):
        out = rk4_solve(lambda t, y: ad.matmul(y, Tensor(w)), y0, 0.0, 1.0, 6)
        return ad.tsum(out)

    assert grad_check(f, rng.normal(size=(1, 3))) < 1e-8


def test_dopri5_rejects_tensor_input():
    with pytest.raises(OdeError):
        ode_solve(lambda t, y: y, Tensor(np.ones(2)), 0.0, 1.0,
                  OdeSolverConfig(method="dopri5"))


def test_max_steps_exceeded():
    cfg = OdeSolverConfig(max_steps=3, rtol=1e-13, atol=1e-14)
    with pytest.raises(OdeError):
        ode_solve(lambda t, y: 50.0 * np.cos(40.0 * t) * y, np.array([1.0]),
                  0.0, 10.0, cfg)


def test_non_finite_state_detected():
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(OdeError):
        rk4_solve(lambda t, y: y * y, np.array([50.0]), 0.0, 5.0, 20)


def test_config_validation():
    with pytest.raises(ValueError):
        OdeSolverConfig(rtol=-1.0)
    with pytest.raises(ValueError):
        OdeSolverConfig(method="euler")
    with pytest.raises(ValueError):
        ode_solve(lambda t, y: y, np.ones(1), 1.0, 0.5, OdeSolverConfig())
