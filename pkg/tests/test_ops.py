import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rdsnet import _kernels, ops
from rdsnet.autograd import ShapeError, Tensor, backward


def _rand(rng, *shape):
    return rng.standard_normal(shape)


@pytest.mark.parametrize("seed", range(6))
def test_conv2d_matches_loop_oracle(backend, seed):
    rng = np.random.default_rng(seed)
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3, 5]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
    h, w = rng.integers(k, k + 5, size=2)
    x, wt, b = _rand(rng, n, c, h, w), _rand(rng, o, c, k, k), _rand(rng, o)
    got = ops.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride, pad).data
    np.testing.assert_allclose(got, oracles.conv2d_loops(x, wt, b, stride, pad), atol=1e-12, rtol=0)


def test_conv2d_identity_kernel():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    assert np.array_equal(ops.conv2d(Tensor(x), Tensor(w), padding=1).data, x)


def test_conv2d_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 3, 3, 3\).*\(1, 2, 4, 4\)"):
        ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


@pytest.mark.parametrize("seed", range(6))
def test_transposed_conv_matches_scatter(backend, seed):
    rng = np.random.default_rng(100 + seed)
    stride = int(rng.choice([1, 2, 4]))
    k = 2 * stride
    pad = stride // 2
    x = _rand(rng, 1, int(rng.integers(1, 4)), 3, 2)
    w = _rand(rng, x.shape[1], int(rng.integers(1, 3)), k, k)
    b = _rand(rng, w.shape[1])
    got = ops.transposed_conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(got, oracles.transposed_conv_scatter(x, w, b, stride, pad), atol=1e-12, rtol=0)


def test_transposed_conv_output_extent():
    # factor f with kernel 2f and padding f/2 up-samples exactly by f
    for f in (2, 4, 8, 16, 32):
        y = ops.transposed_conv2d(Tensor(np.ones((1, 1, 3, 5))), Tensor(np.ones((1, 1, 2 * f, 2 * f))),
                                  stride=f, padding=f // 2)
        assert y.shape == (1, 1, 3 * f, 5 * f)


@pytest.mark.parametrize("k", [2, 3])
def test_grouped_transposed_conv_matches_scatter(k):
    rng = np.random.default_rng(k)
    x, w = _rand(rng, 2, 3, 3, 4), _rand(rng, 3, k, k)
    got = ops.transposed_conv2d_grouped(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(got, oracles.grouped_transposed_scatter(x, w), atol=1e-12, rtol=0)


def test_grouped_transposed_conv_constant_kernel_replicates():
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    y = ops.transposed_conv2d_grouped(Tensor(x), Tensor(np.ones((1, 2, 2)))).data[0, 0]
    assert np.array_equal(y, np.kron(x[0, 0], np.ones((2, 2))))


def test_grouped_transposed_conv_rejects_mismatch():
    with pytest.raises(ShapeError):
        ops.transposed_conv2d_grouped(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((2, 2, 2))))
    with pytest.raises(ValueError, match="stride"):
        ops.transposed_conv2d_grouped(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 2, 2))), stride=1)


def test_backends_agree_bitwise_on_repeat():
    rng = np.random.default_rng(0)
    x, w = _rand(rng, 2, 5, 7, 6), _rand(rng, 4, 5, 3, 3)
    for impl in _kernels.available_backends().values():
        a = impl.conv2d_forward(x, w, None, 1, 1)
        assert np.array_equal(a, impl.conv2d_forward(x, w, None, 1, 1))


def test_backends_agree_numerically():
    backends = list(_kernels.available_backends().values())
    rng = np.random.default_rng(1)
    x, w, g = _rand(rng, 2, 6, 9, 8), _rand(rng, 5, 6, 3, 3), _rand(rng, 2, 5, 5, 4)
    ref = backends[0]
    for impl in backends[1:]:
        np.testing.assert_allclose(impl.conv2d_forward(x, w, None, 2, 1), ref.conv2d_forward(x, w, None, 2, 1),
                                   atol=1e-12)
        np.testing.assert_allclose(impl.conv2d_grad_input(g, w, 9, 8, 2, 1), ref.conv2d_grad_input(g, w, 9, 8, 2, 1),
                                   atol=1e-12)
        np.testing.assert_allclose(impl.conv2d_grad_weight(g, x, 3, 3, 2, 1),
                                   ref.conv2d_grad_weight(g, x, 3, 3, 2, 1), atol=1e-12)


def test_batchnorm_train_normalises_and_updates_running_stats():
    rng = np.random.default_rng(3)
    x = rng.normal(2.0, 3.0, size=(4, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    y = ops.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, train=True).data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))


def test_batchnorm_eval_uses_running_stats():
    x = np.full((1, 1, 2, 2), 5.0)
    y = ops.batchnorm(Tensor(x), Tensor(np.array([2.0])), Tensor(np.array([1.0])),
                      np.array([1.0]), np.array([4.0]), train=False).data
    np.testing.assert_allclose(y, 2.0 * 4.0 / np.sqrt(4.0 + ops.BN_EPSILON) + 1.0)


def test_batchnorm_train_needs_two_values():
    with pytest.raises(ShapeError):
        ops.batchnorm(Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                      np.zeros(1), np.ones(1), train=True)


def test_maxpool_picks_first_maximum_and_routes_gradient():
    x = Tensor(np.array([[[[1.0, 1.0], [0.0, 1.0]]]]), requires_grad=True)
    y = ops.maxpool2(x)
    assert y.data.item() == 1.0
    backward(ops.mse_loss(y, np.zeros(y.shape)))
    assert np.array_equal(x.grad, [[[[2.0, 0.0], [0.0, 0.0]]]])


def test_sigmoid_stable_at_extremes():
    y = ops.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


def test_bilinear_matrix_rows_sum_to_one_and_identity():
    for a, b in [(3, 7), (8, 4), (5, 5), (1, 4)]:
        m = ops.bilinear_matrix(a, b)
        np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert np.array_equal(ops.bilinear_matrix(4, 4), np.eye(4))


def test_bilinear_resize_preserves_constants():
    y = ops.bilinear_resize(Tensor(np.full((1, 2, 3, 5), 0.25)), 7, 4).data
    np.testing.assert_allclose(y, 0.25)


def test_mse_matches_direct_sum():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p, t = rng.random((1, 1, 6, 5)), rng.random((1, 1, 6, 5))
        assert abs(ops.mse_loss(Tensor(p), t).item() - oracles.mse_sum(p, t)) < 1e-12


def test_bce_of_perfect_prediction_is_small():
    t = np.array([[0.0, 1.0]])
    assert ops.bce_loss(Tensor(np.array([[1e-9, 1 - 1e-9]])), t).item() < 1e-8


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.mse_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3)))


def test_scale_and_add_scalar_param():
    x = Tensor(np.ones((1, 1, 2, 2)))
    f, b = Tensor(np.array([3.0]), requires_grad=True), Tensor(np.array([0.5]), requires_grad=True)
    y = ops.add_scalar_param(ops.scale(x, f), b)
    np.testing.assert_allclose(y.data, 3.5)
    backward(ops.mse_loss(y, np.zeros((1, 1, 2, 2))))
    np.testing.assert_allclose(f.grad, [2 * 3.5])
    np.testing.assert_allclose(b.grad, [2 * 3.5])


def test_concat_rejects_extent_mismatch():
    with pytest.raises(ShapeError):
        ops.concat_channels([Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2)))])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 7), st.integers(0, 2**31 - 1))
def test_conv_is_linear_in_input(c, o, side, seed):
    rng = np.random.default_rng(seed)
    x1, x2, w = _rand(rng, 1, c, side, side), _rand(rng, 1, c, side, side), _rand(rng, o, c, 3, 3)
    lhs = ops.conv2d(Tensor(2 * x1 + x2), Tensor(w), padding=1).data
    rhs = 2 * ops.conv2d(Tensor(x1), Tensor(w), padding=1).data + ops.conv2d(Tensor(x2), Tensor(w), padding=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_transposed_conv_is_adjoint_of_conv(ci, co, side, seed):
    # <conv(x), y> == <x, conv^T(y)> for matching stride/padding
    rng = np.random.default_rng(seed)
    w = _rand(rng, co, ci, 4, 4)
    x = _rand(rng, 1, ci, 2 * side, 2 * side)
    y_shape = ops.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).shape
    y = _rand(rng, *y_shape)
    lhs = float((ops.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data * y).sum())
    xt = ops.transposed_conv2d(Tensor(y), Tensor(w), stride=2, padding=1).data
    assert abs(lhs - float((x * xt).sum())) < 1e-9 * max(1.0, abs(lhs))
