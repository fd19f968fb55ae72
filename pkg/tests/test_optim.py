"""Adam update rule against its closed form and on a quadratic."""

import numpy as np
import pytest

from omrfit.errors import ConfigError, DimensionError
from omrfit.optim import AdamState, adam_step


def test_first_step_closed_form():
    # With bias correction the first step is lr * g / (|g| + eps)
    state = AdamState.init(1, lr=0.1)
    params = np.array([1.0])
    grad = np.array([4.0])
    new_params, state = adam_step(state, params, grad)
    expected = 1.0 - 0.1 * 4.0 / (4.0 + 1e-8)
    assert new_params[0] == pytest.approx(expected, abs=1e-12)
    assert state.step_count == 1


def test_first_step_direction_is_sign_of_grad():
    state = AdamState.init(3, lr=0.05)
    params = np.zeros(3)
    grad = np.array([2.0, -7.0, 0.5])
    new_params, _ = adam_step(state, params, grad)
    np.testing.assert_allclose(new_params, -0.05 * np.sign(grad), atol=1e-8)


def test_second_step_closed_form():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    state = AdamState.init(1, lr=lr, beta1=b1, beta2=b2, eps=eps)
    p = np.array([0.0])
    g1, g2 = np.array([1.0]), np.array([3.0])
    p, state = adam_step(state, p, g1)
    p, state = adam_step(state, p, g2)
    m = (1 - b1) * g1 * b1**0 * 0 + b1 * (1 - b1) * g1 + (1 - b1) * g2
    m = b1 * ((1 - b1) * g1) + (1 - b1) * g2
    v = b2 * ((1 - b2) * g1**2) + (1 - b2) * g2**2
    mhat = m / (1 - b1**2)
    vhat = v / (1 - b2**2)
    step1 = lr * g1 / (np.abs(g1) + eps)
    expected = -step1 - lr * mhat / (np.sqrt(vhat) + eps)
    assert p[0] == pytest.approx(expected[0], abs=1e-12)


def test_converges_on_quadratic():
    state = AdamState.init(2, lr=0.1)
    target = np.array([3.0, -1.5])
    p = np.zeros(2)
    for _ in range(500):
        p, state = adam_step(state, p, 2.0 * (p - target))
    np.testing.assert_allclose(p, target, atol=1e-3)


def test_state_is_per_coordinate():
    state = AdamState.init(2, lr=0.1)
    p = np.zeros(2)
    p, state = adam_step(state, p, np.array([1.0, 0.0]))
    # the zero-gradient coordinate must not move
    assert p[1] == 0.0
    assert p[0] != 0.0


def test_dimension_mismatch():
    state = AdamState.init(3, lr=0.1)
    with pytest.raises(DimensionError):
        adam_step(state, np.zeros(3), np.zeros(4))
    with pytest.raises(DimensionError):
        adam_step(state, np.zeros(4), np.zeros(4))


def test_init_validation():
    with pytest.raises(ConfigError):
        AdamState.init(3, lr=0.0)
    with pytest.raises(ConfigError):
        AdamState.init(3, lr=0.1, beta1=1.0)
    with pytest.raises(ConfigError):
        AdamState.init(0, lr=0.1)


def test_step_is_pure():
    # inputs must not be mutated in place
    state = AdamState.init(2, lr=0.1)
    p = np.ones(2)
    g = np.full(2, 0.5)
    p_copy, g_copy = p.copy(), g.copy()
    adam_step(state, p, g)
    np.testing.assert_array_equal(p, p_copy)
    np.testing.assert_array_equal(g, g_copy)
    np.testing.assert_array_equal(state.m, np.zeros(2))
