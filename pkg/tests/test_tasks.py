import numpy as np
import pytest

from iclcot.errors import ContractError, ShapeError
from iclcot.oracles import least_squares_fit
from iclcot.rng import RngState, stream_for
from iclcot.tasks import (
    LinearTask,
    Relu2NNTask,
    fresh_eval_task,
    prompt_from_dict,
    prompt_to_dict,
    sample_linear_task,
    sample_prompt,
    sample_relu2nn_task,
    task_eval,
    task_eval_batch,
)


def test_linear_task_paper_scale_dimension():
    task = sample_linear_task(20, RngState(0))
    assert task.w.shape == (20,)
    assert task.d == 20


def test_zero_weights_give_zero_function():
    task = LinearTask(w=np.zeros(4))
    assert task_eval(task, RngState(1).normal(4)) == 0.0


def test_linear_task_seed_determinism():
    a = sample_linear_task(6, RngState(42))
    b = sample_linear_task(6, RngState(42))
    assert np.array_equal(a.w, b.w)


def test_relu2nn_output_nonnegative():
    rng = RngState(2)
    task = sample_relu2nn_task(3, 7, rng)
    for _ in range(50):
        assert task_eval(task, rng.normal(3)) >= 0.0


def test_relu2nn_zero_weights():
    task = Relu2NNTask(w1=np.zeros((4, 2)), b1=np.zeros(4), w2=np.zeros((1, 4)), b2=0.0)
    assert task_eval(task, np.array([1.0, -1.0])) == 0.0


def test_relu2nn_matches_independent_forward():
    task = sample_relu2nn_task(2, 2, RngState(3))
    x = RngState(4).normal(2)
    hidden = np.maximum(task.w1.dot(x) + task.b1, 0.0)
    expected = max(task.w2[0].dot(hidden) + task.b2, 0.0)
    assert abs(task_eval(task, x) - expected) < 1e-12


def test_linear_eval_hand_case():
    task = LinearTask(w=np.array([1.0, 2.0]))
    assert task_eval(task, np.array([3.0, 4.0])) == 11.0
    assert task_eval(task, np.zeros(2)) == 0.0


def test_task_eval_dimension_mismatch():
    task = sample_linear_task(3, RngState(5))
    with pytest.raises(ShapeError):
        task_eval(task, np.zeros(4))
    with pytest.raises(ShapeError):
        task_eval_batch(task, np.zeros((2, 4)))


def test_prompt_paper_scale_shape():
    task = sample_linear_task(20, RngState(6))
    prompt = sample_prompt(task, 40, RngState(7))
    assert prompt.xs.shape == (40, 20)
    assert prompt.ys.shape == (40,)
    assert prompt.query_x.shape == (20,)


def test_prompt_k_zero_query_only():
    task = sample_linear_task(3, RngState(8))
    prompt = sample_prompt(task, 0, RngState(9))
    assert prompt.k == 0
    assert prompt.query_y == task_eval(task, prompt.query_x)


def test_prompt_ys_match_task_eval_exactly():
    rng = RngState(10)
    linear = sample_linear_task(4, rng)
    relu = sample_relu2nn_task(4, 9, rng)
    for task in (linear, relu):
        prompt = sample_prompt(task, 12, rng)
        for j in range(prompt.k):
            assert prompt.ys[j] == task_eval(task, prompt.xs[j])


def test_prompt_full_rank_for_k_ge_d():
    # least-squares residual on the prompt's own pairs is ~0
    task = sample_linear_task(5, RngState(11))
    prompt = sample_prompt(task, 8, RngState(12))
    w_hat = least_squares_fit(prompt.xs, prompt.ys)
    residual = np.linalg.norm(prompt.xs @ w_hat - prompt.ys)
    assert residual < 1e-8


def test_fresh_eval_task_streams_and_determinism():
    assert stream_for("eval") != stream_for("train")
    a = fresh_eval_task("linear", 4, RngState(13, stream_for("eval")))
    b = fresh_eval_task("linear", 4, RngState(13, stream_for("eval")))
    assert np.array_equal(a.w, b.w)
    rng = RngState(13, stream_for("eval"))
    t1 = fresh_eval_task("linear", 4, rng)
    t2 = fresh_eval_task("linear", 4, rng)
    assert not np.array_equal(t1.w, t2.w)


def test_fresh_eval_task_rejects_unknown_family():
    with pytest.raises(ContractError):
        fresh_eval_task("cubic", 3, RngState(0))


def test_prompt_serialization_round_trip_lossless():
    task = sample_relu2nn_task(3, 5, RngState(14))
    prompt = sample_prompt(task, 6, RngState(15))
    back = prompt_from_dict(prompt_to_dict(prompt))
    assert np.array_equal(back.xs, prompt.xs)
    assert np.array_equal(back.ys, prompt.ys)
    assert np.array_equal(back.query_x, prompt.query_x)
    assert back.query_y == prompt.query_y


def test_empty_prompt_serialization():
    task = sample_linear_task(2, RngState(16))
    prompt = sample_prompt(task, 0, RngState(17))
    back = prompt_from_dict(prompt_to_dict(prompt))
    assert back.k == 0 and back.d == 2
