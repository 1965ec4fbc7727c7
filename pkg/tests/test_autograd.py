import numpy as np
import pytest

from rdsnet import ops
from rdsnet.autograd import ShapeError, Tensor, as_tensor, backward, is_grad_enabled, no_grad


def test_tensor_stores_contiguous_float64():
    t = Tensor(np.arange(6, dtype=np.int32).reshape(2, 3).T)
    assert t.data.dtype == np.float64 and t.data.flags.c_contiguous
    assert t.shape == (3, 2) and t.ndim == 2 and t.size == 6 and t.is_leaf


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ops.scale(x, 2.0))


def test_gradients_accumulate_across_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    for _ in range(2):
        backward(ops.mse_loss(x, np.zeros(2)))
    np.testing.assert_allclose(x.grad, 2 * np.array([1.0, 2.0]))
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression_sums_both_paths():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = ops.add(x, x)
    backward(ops.mse_loss(y, np.zeros(1)))
    np.testing.assert_allclose(x.grad, [2 * 6.0 * 2])


def test_diamond_graph():
    x = Tensor(np.full((1, 1, 2, 2), 0.5), requires_grad=True)
    a = ops.sigmoid(x)
    b = ops.relu(x)
    y = ops.add(ops.scale(a, 2.0), b)
    backward(ops.mse_loss(y, np.zeros(y.shape)))
    s = 1 / (1 + np.exp(-0.5))
    expected = 2 * (2 * s + 0.5) / 4 * (2 * s * (1 - s) + 1)
    np.testing.assert_allclose(x.grad, expected)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        assert not is_grad_enabled()
        y = ops.scale(x, 2.0)
    assert is_grad_enabled()
    assert not y.requires_grad and y.is_leaf


def test_untracked_inputs_get_no_grad():
    x = Tensor(np.ones(2))
    w = Tensor(np.array([2.0]), requires_grad=True)
    backward(ops.mse_loss(ops.scale(x, w), np.zeros(2)))
    assert x.grad is None and w.grad is not None


def test_as_tensor_and_detach():
    t = Tensor(np.ones(2), requires_grad=True)
    assert as_tensor(t) is t
    assert isinstance(as_tensor([1.0]), Tensor)
    d = t.detach()
    assert not d.requires_grad


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array([0.1]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = ops.scale(y, 1.0)
    backward(ops.mse_loss(y, np.zeros(1)))
    np.testing.assert_allclose(x.grad, [0.2])
