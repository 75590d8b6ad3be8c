import copy

import numpy as np
import pytest

from mirage.rl.optim import OptimizerState, adam_step


def test_zero_gradient_leaves_theta():
    theta = np.arange(5.0)
    adam_step(theta, np.zeros(5), OptimizerState.like(theta))
    np.testing.assert_array_equal(theta, np.arange(5.0))


@pytest.mark.parametrize("g", [0.3, -7.0, 1e-3])
def test_first_step_magnitude(g):
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    theta = np.zeros(3)
    st = OptimizerState.like(theta, lr=0.01)
    adam_step(theta, np.full(3, g), st)
    expected = -0.01 * g / (abs(g) + 1e-8)
    np.testing.assert_allclose(theta, expected, rtol=1e-12)
    assert abs(theta[0]) == pytest.approx(0.01, rel=1e-4)


def test_deterministic():
    rng = np.random.default_rng(0)
    theta0 = rng.normal(size=10)
    st0 = OptimizerState.like(theta0)
    adam_step(theta0.copy(), rng.normal(size=10), st0)
    g = rng.normal(size=10)
    a, sa = adam_step(theta0.copy(), g, copy.deepcopy(st0))
    b, sb = adam_step(theta0.copy(), g, copy.deepcopy(st0))
    assert a.tobytes() == b.tobytes() and sa.t == sb.t == 2


def test_shape_mismatch():
    theta = np.zeros(3)
    with pytest.raises(ValueError):
        adam_step(theta, np.zeros(4), OptimizerState.like(theta))


def test_minimizes_quadratic():
    theta = np.array([3.0, -2.0])
    st = OptimizerState.like(theta, lr=0.05)
    for _ in range(2000):
        adam_step(theta, 2 * theta, st)
    assert np.abs(theta).max() < 1e-2
