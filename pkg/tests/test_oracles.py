import numpy as np
import pytest

from iclcot.errors import ContractError, ShapeError
from iclcot.oracles import (
    chain_from_dict,
    chain_to_dict,
    chain_trace,
    expected_policy_gradient_bruteforce,
    least_squares_fit,
)
from iclcot.rng import RngState
from iclcot.tasks import (
    LinearTask,
    Relu2NNTask,
    sample_linear_task,
    sample_prompt,
    sample_relu2nn_task,
    task_eval,
)


def test_least_squares_exact_recovery():
    task = sample_linear_task(4, RngState(0))
    xs = RngState(1).normal(4, 4)
    ys = xs @ task.w
    w_hat = least_squares_fit(xs, ys)
    assert np.linalg.norm(w_hat - task.w) < 1e-8


def test_least_squares_min_norm_underdetermined():
    # one pair (x=[1,0], y=3) in d=2: the min-norm solution is [3, 0]
    w_hat = least_squares_fit(np.array([[1.0, 0.0]]), np.array([3.0]))
    assert np.allclose(w_hat, [3.0, 0.0], atol=1e-12)


def test_least_squares_zero_targets():
    xs = RngState(2).normal(5, 3)
    assert np.allclose(least_squares_fit(xs, np.zeros(5)), np.zeros(3), atol=1e-12)


def test_least_squares_residual_globally_optimal():
    xs = RngState(3).normal(6, 4)
    ys = RngState(4).normal(6) * 3.0
    w_hat = least_squares_fit(xs, ys)
    best = np.sum((xs @ w_hat - ys) ** 2)
    rng = RngState(5)
    for _ in range(100):
        w = w_hat + rng.normal(4)
        assert np.sum((xs @ w - ys) ** 2) >= best - 1e-9


def test_least_squares_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        least_squares_fit(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ShapeError):
        least_squares_fit(np.zeros((3, 2)), np.zeros(4))


def test_chain_trace_final_matches_task_eval_exactly():
    rng = RngState(6)
    for task in (sample_linear_task(5, rng), sample_relu2nn_task(5, 11, rng)):
        x = rng.normal(5)
        trace = chain_trace(task, x)
        assert trace.final == task_eval(task, x)
        assert len(trace.steps) == 2


def test_chain_trace_zero_task_all_zero():
    task = LinearTask(w=np.zeros(3))
    trace = chain_trace(task, np.ones(3))
    assert np.array_equal(trace.steps[0][1], np.zeros(3))
    assert trace.final == 0.0


def test_chain_trace_hand_case_2x2():
    # independent arithmetic for a fixed d=2, h=2 network
    task = Relu2NNTask(
        w1=np.array([[1.0, -1.0], [0.5, 2.0]]),
        b1=np.array([0.25, -0.5]),
        w2=np.array([[2.0, 1.0]]),
        b2=0.1,
    )
    x = np.array([1.0, 0.5])
    hidden = np.array([max(1.0 - 0.5 + 0.25, 0.0), max(0.5 + 1.0 - 0.5, 0.0)])
    expected = max(2.0 * hidden[0] + 1.0 * hidden[1] + 0.1, 0.0)
    trace = chain_trace(task, x)
    assert np.allclose(trace.steps[0][1], hidden, atol=1e-15)
    assert abs(trace.final - expected) < 1e-12


def test_chain_trace_composition_reproduces_final_exactly():
    rng = RngState(7)
    task = sample_relu2nn_task(4, 8, rng)
    x = rng.normal(4)
    trace = chain_trace(task, x)
    hidden = trace.steps[0][1]
    recomposed = float(np.maximum(hidden[None, :] @ task.w2[0] + task.b2, 0.0)[0])
    assert recomposed == trace.final


def test_chain_trace_composition_linear():
    rng = RngState(8)
    task = sample_linear_task(6, rng)
    x = rng.normal(6)
    trace = chain_trace(task, x)
    recomposed = float((x[None, :] @ task.w)[0])
    assert recomposed == trace.final


def test_chain_trace_shape_mismatch():
    task = sample_linear_task(3, RngState(9))
    with pytest.raises(ShapeError):
        chain_trace(task, np.zeros(2))


def test_chain_serialization_round_trip():
    task = sample_relu2nn_task(3, 4, RngState(10))
    trace = chain_trace(task, RngState(11).normal(3))
    back = chain_from_dict(chain_to_dict(trace))
    assert back.final == trace.final
    for (la, va), (lb, vb) in zip(trace.steps, back.steps):
        assert la == lb and np.array_equal(va, vb)


def test_bruteforce_gradient_uniform_losses_zero():
    g = expected_policy_gradient_bruteforce(np.full(4, 2.5), RngState(12).normal(4))
    assert np.allclose(g, np.zeros(4), atol=1e-12)


def test_bruteforce_gradient_two_arm_hand_case():
    g = expected_policy_gradient_bruteforce(np.array([0.0, 1.0]), np.zeros(2))
    assert np.allclose(g, [-0.25, 0.25], atol=1e-12)


def test_bruteforce_gradient_sums_to_zero():
    rng = RngState(13)
    g = expected_policy_gradient_bruteforce(rng.normal(7), rng.normal(7))
    assert abs(g.sum()) < 1e-12


def test_bruteforce_gradient_pool_size_limit():
    with pytest.raises(ContractError):
        expected_policy_gradient_bruteforce(np.zeros(13), np.zeros(13))
