import numpy as np
import pytest

from iclcot.errors import ShapeError
from iclcot.optim import AdamState, adam_step


def test_moments_start_at_zero():
    params = {"w": np.ones(3)}
    state = AdamState(params)
    assert state.step == 0
    assert np.array_equal(state.m["w"], np.zeros(3))
    assert np.array_equal(state.v["w"], np.zeros(3))


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    state = AdamState(params)
    adam_step(params, {"w": np.zeros(3)}, state, lr=0.1)
    assert np.array_equal(params["w"], [1.0, -2.0, 3.0])


def test_quadratic_converges_within_100_steps():
    # run the scalar recurrence: f(x) = x^2 from x = 1 with lr 0.1
    params = {"x": np.array([1.0])}
    state = AdamState(params)
    for _ in range(100):
        adam_step(params, {"x": 2.0 * params["x"]}, state, lr=0.1)
        if abs(params["x"][0]) < 0.1:
            break
    assert abs(params["x"][0]) < 0.1


def test_shape_mismatch_rejected():
    params = {"w": np.zeros(3)}
    state = AdamState(params)
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(4)}, state, lr=0.1)
