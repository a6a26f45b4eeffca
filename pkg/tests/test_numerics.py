import numpy as np
import pytest

from iclcot.errors import ShapeError
from iclcot.numerics import matmul, relu, softmax
from iclcot.rng import RngState


def test_matmul_hand_case():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0], [6.0]])
    assert np.array_equal(matmul(a, b), np.array([[17.0], [39.0]]))


def test_matmul_identity():
    a = RngState(0).normal(4, 4)
    assert np.allclose(matmul(a, np.eye(4)), a)


def test_matmul_zero():
    z = np.zeros((3, 2))
    b = RngState(1).normal(2, 5)
    assert np.array_equal(matmul(z, b), np.zeros((3, 5)))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_precision_tag_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 2), dtype=np.float32), np.zeros((2, 2)))


def test_matmul_accumulates_in_64_bit():
    # catastrophic-cancellation probe: fails under float32 accumulation
    a = np.array([[1e8, 1.0, -1e8]], dtype=np.float32)
    b = np.ones((3, 1), dtype=np.float32)
    out = matmul(a, b)
    assert out.dtype == np.float32
    assert out[0, 0] == np.float32(1.0)


def test_relu_cases():
    assert np.array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    assert np.array_equal(relu(-np.ones((3, 3))), np.zeros((3, 3)))
    x = RngState(2).normal(4, 4)
    assert np.array_equal(relu(relu(x)), relu(x))


def test_softmax_uniform():
    assert np.allclose(softmax(np.zeros(3)), np.full(3, 1 / 3))


def test_softmax_large_logits_stable():
    p = softmax(np.array([1000.0, 0.0]))
    assert np.isfinite(p).all()
    assert p[0] > 0.999 and p[1] < 1e-6


def test_softmax_shift_invariance_and_sum():
    rng = RngState(3)
    for _ in range(20):
        v = rng.normal(6) * 10
        p = softmax(v)
        assert abs(p.sum() - 1.0) < 1e-9
        assert (p > 0).all()
        assert np.allclose(p, softmax(v + 17.3), atol=1e-12)


def test_softmax_rejects_nonfinite():
    with pytest.raises(ShapeError):
        softmax(np.array([np.inf, 0.0]))
