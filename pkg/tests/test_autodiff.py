import numpy as np
import pytest

from iclcot.autodiff import GradientTape, Tensor, backward
from iclcot.errors import ContractError
from iclcot.oracles import finite_difference_grads
from iclcot.rng import RngState


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-7)
    return float((np.abs(a - b) / scale).max())


def check_against_fd(build, params: dict[str, np.ndarray], tol: float = 1e-4):
    """build(params as tensors) -> scalar Tensor; compares to central diffs."""
    tape = GradientTape()
    tensors = {k: tape.param(k, v) for k, v in params.items()}
    loss = build(tensors)
    grads = backward(tape, loss)

    def f(arrays):
        vals = {k: Tensor(np.asarray(v, dtype=np.float64)) for k, v in arrays.items()}
        return float(build(vals).data)

    fd = finite_difference_grads(f, params)
    for k in params:
        assert rel_err(grads[k], fd[k]) < tol, k


def test_sum_gradient_is_ones():
    tape = GradientTape()
    w = tape.param("w", RngState(0).normal(3, 4))
    grads = backward(tape, w.sum())
    assert np.array_equal(grads["w"], np.ones((3, 4)))


def test_constant_loss_zero_gradient():
    tape = GradientTape()
    w = tape.param("w", RngState(1).normal(2, 2))
    loss = Tensor(np.array(5.0)) * 1.0
    grads = backward(tape, loss)
    assert np.array_equal(grads["w"], np.zeros((2, 2)))
    assert grads["w"].shape == w.data.shape


def test_linear_residual_matches_fd():
    rng = RngState(2)
    x = rng.normal(4, 1)
    y = rng.normal(3, 1)

    def build(p):
        d = (p["W"] @ Tensor(x)) - Tensor(y)
        return (d * d).sum()

    check_against_fd(build, {"W": rng.normal(3, 4)})


def test_non_scalar_loss_rejected():
    tape = GradientTape()
    w = tape.param("w", np.ones((2, 2)))
    with pytest.raises(ContractError):
        backward(tape, w * 2.0)


def test_duplicate_param_rejected():
    tape = GradientTape()
    tape.param("w", np.ones(2))
    with pytest.raises(ContractError):
        tape.param("w", np.ones(2))


def test_replay_identical_gradients():
    rng = RngState(3)
    w_val = rng.normal(4, 4)
    x = rng.normal(4, 2)

    def run():
        tape = GradientTape()
        w = tape.param("w", w_val)
        h = (w @ Tensor(x)).relu()
        return backward(tape, (h * h).mean())

    g1, g2 = run(), run()
    assert np.array_equal(g1["w"], g2["w"])


def test_broadcast_add_mul_backward():
    rng = RngState(4)

    def build(p):
        z = p["a"] + p["b"]  # (3,4) + (4,)
        return (z * p["b"]).sum()

    check_against_fd(build, {"a": rng.normal(3, 4), "b": rng.normal(4)})


def test_gather_backward_accumulates_duplicates():
    idx = np.array([0, 2, 2])

    def build(p):
        return (p["v"][idx] * p["v"][idx]).sum()

    check_against_fd(build, {"v": RngState(5).normal(4)})


def test_layer_norm_backward():
    rng = RngState(6)

    def build(p):
        return p["x"].layer_norm(p["g"], p["b"]).gelu().sum()

    check_against_fd(
        build, {"x": rng.normal(2, 6), "g": 1 + 0.1 * rng.normal(6), "b": rng.normal(6)}
    )


def test_masked_softmax_exact_zero_and_backward():
    rng = RngState(7)
    mask = np.zeros((3, 3))
    mask[np.triu_indices(3, k=1)] = -np.inf
    t = Tensor(rng.normal(3, 3))
    out = t.masked_softmax(mask)
    assert np.all(out.data[np.triu_indices(3, k=1)] == 0.0)
    assert np.allclose(out.data.sum(axis=-1), 1.0)

    weights = RngState(8).normal(3, 3)

    def build(p):
        return (p["s"].masked_softmax(mask) * Tensor(weights)).sum()

    check_against_fd(build, {"s": RngState(9).normal(3, 3)})


def test_matmul_batched_backward():
    rng = RngState(9)

    def build(p):
        return ((p["a"] @ p["b"]).tanh()).sum()

    check_against_fd(build, {"a": rng.normal(2, 3).reshape(1, 2, 3).repeat(2, 0),
                             "b": rng.normal(3, 2)})


def test_transpose_reshape_backward():
    rng = RngState(10)

    def build(p):
        z = p["x"].reshape(2, 3, 2).transpose(0, 2, 1)
        return (z * z).sum()

    check_against_fd(build, {"x": rng.normal(4, 3)})


def test_randomized_small_graphs_match_fd():
    rng = RngState(11)
    for i in range(8):
        a = rng.normal(3, 3)
        b = rng.normal(3, 3)
        v = rng.normal(3)

        def build(p):
            h = (p["a"] @ p["b"]).gelu() + p["v"]
            z = h.masked_softmax() * p["a"]
            return (z * z).mean() + (p["b"].relu()).sum() * 0.1

        check_against_fd(build, {"a": a, "b": b, "v": v})
