"""Differentiable layer vocabulary for the saliency graphs.

Every function takes and returns :class:`~rdsnet.autograd.Tensor` values and
records a backward closure when gradients are required. Convolution
arithmetic is delegated to :mod:`rdsnet._kernels`.
"""
from __future__ import annotations

import numpy as np

from rdsnet import _kernels
from rdsnet.autograd import ShapeError, Tensor, as_tensor, make_result

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


def _require_rank4(x, what):
    if x.ndim != 4:
        raise ShapeError(f"{what} expects a rank-4 (n, c, h, w) tensor, got shape {x.shape}")


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    ``weight`` has shape ``(out_channels, in_channels, k, k)``.
    """
    _require_rank4(x, "conv2d")
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv2d weight shape {weight.shape} does not match input shape {x.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match weight shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    _, _, h, w = x.shape
    kh, kw = weight.shape[2:]
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"conv2d output would be empty: input shape {x.shape}, weight shape {weight.shape}, "
            f"stride {stride}, padding {padding}"
        )
    out = _kernels.conv2d_forward(x.data, weight.data, None if bias is None else bias.data,
                                  stride, padding)

    def _backward(g):
        gx = _kernels.conv2d_grad_input(g, weight.data, h, w, stride, padding) if x.requires_grad else None
        gw = (_kernels.conv2d_grad_weight(g, x.data, kh, kw, stride, padding)
              if weight.requires_grad else None)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _backward)


def transposed_conv2d(x, weight, bias=None, stride=1, padding=0):
    """Full transposed convolution; ``weight`` is ``(in_channels, out_channels, k, k)``.

    Output extent per dimension is ``(size - 1) * stride - 2 * padding + k``.
    """
    _require_rank4(x, "transposed_conv2d")
    if weight.ndim != 4 or weight.shape[0] != x.shape[1]:
        raise ShapeError(
            f"transposed_conv2d weight shape {weight.shape} does not match input shape {x.shape}"
        )
    _, _, h, w = x.shape
    kh, kw = weight.shape[2:]
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"transposed_conv2d output would be empty for input shape {x.shape}")
    # the adjoint of a conv from (co, ho, wo) to (ci, h, w) with the same weight tensor
    out = _kernels.conv2d_grad_input(x.data, weight.data, ho, wo, stride, padding)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def _backward(g):
        gx = _kernels.conv2d_forward(g, weight.data, None, stride, padding) if x.requires_grad else None
        gw = (_kernels.conv2d_grad_weight(x.data, g, kh, kw, stride, padding)
              if weight.requires_grad else None)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _backward)


def transposed_conv2d_grouped(x, weight, stride=None):
    """Per-channel non-overlapping up-sampling.

    ``weight`` has shape ``(channels, k, k)`` and the stride equals ``k``, so
    every input pixel deposits its own ``k x k`` stamp.
    """
    _require_rank4(x, "transposed_conv2d_grouped")
    if weight.ndim != 3 or weight.shape[1] != weight.shape[2]:
        raise ShapeError(f"grouped transposed weight must be (C, k, k), got {weight.shape}")
    if weight.shape[0] != x.shape[1]:
        raise ShapeError(
            f"grouped transposed weight shape {weight.shape} does not match input shape {x.shape}"
        )
    k = weight.shape[1]
    if stride is not None and stride != k:
        raise ValueError(f"grouped transposed convolution needs stride == kernel side ({k}), got {stride}")
    n, c, h, w = x.shape
    stamp = x.data[:, :, :, None, :, None] * weight.data[None, :, None, :, None, :]
    out = stamp.reshape(n, c, h * k, w * k)

    def _backward(g):
        g6 = g.reshape(n, c, h, k, w, k)
        gx = np.einsum("nchawb,cab->nchw", g6, weight.data) if x.requires_grad else None
        gw = np.einsum("nchawb,nchw->cab", g6, x.data) if weight.requires_grad else None
        return gx, gw

    return make_result(out, (x, weight), _backward)


def batchnorm(x, gamma, beta, running_mean, running_var, train=True,
              eps=BN_EPSILON, momentum=BN_MOMENTUM):
    """Per-channel batch normalization.

    In train mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy arrays) are updated in place by exponential moving
    average; the running variance uses the unbiased estimate.
    """
    _require_rank4(x, "batchnorm")
    n, c, h, w = x.shape
    for vec, label in ((gamma, "gamma"), (beta, "beta")):
        if vec.shape != (c,):
            raise ShapeError(f"batchnorm {label} shape {vec.shape} does not match input shape {x.shape}")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"batchnorm running stats must have length {c}")
    g4 = gamma.data[None, :, None, None]
    if train:
        count = n * h * w
        if count < 2:
            raise ShapeError(
                f"batchnorm in train mode needs at least 2 values per channel, input shape {x.shape}"
            )
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean[None, :, None, None]
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std[None, :, None, None]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    def _backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * g4
            s = inv_std[None, :, None, None]
            if train:
                m1 = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                m2 = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = s * (gxhat - m1 - xhat * m2)
            else:
                gx = gxhat * s
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), _backward)


def relu(x):
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def maxpool2(x):
    """2x2 max pooling with stride 2; ties route the gradient to the first maximum."""
    _require_rank4(x, "maxpool2")
    n, c, h, w = x.shape
    if h % 2 or w % 2 or h == 0 or w == 0:
        raise ShapeError(f"maxpool2 needs even, non-zero spatial extents, got shape {x.shape}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def _backward(g):
        gwin = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return make_result(out, (x,), _backward)


def bilinear_matrix(in_size, out_size):
    """Row-stochastic interpolation matrix ``(out_size, in_size)``, half-pixel centres."""
    if in_size < 1 or out_size < 1:
        raise ShapeError(f"bilinear resize extents must be >= 1, got {in_size} -> {out_size}")
    mat = np.zeros((out_size, in_size))
    if in_size == out_size:
        np.fill_diagonal(mat, 1.0)
        return mat
    scale = in_size / out_size
    for i in range(out_size):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), in_size - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, in_size - 1)
        frac = src - i0
        mat[i, i0] += 1.0 - frac
        mat[i, i1] += frac
    return mat


def bilinear_resize_array(a, out_h, out_w):
    """Resize the trailing two axes of a numpy array."""
    rh = bilinear_matrix(a.shape[-2], out_h)
    rw = bilinear_matrix(a.shape[-1], out_w)
    return rh @ a @ rw.T


def bilinear_resize(x, out_h, out_w):
    _require_rank4(x, "bilinear_resize")
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    rh = bilinear_matrix(h, out_h)
    rw = bilinear_matrix(w, out_w)
    out = rh @ x.data @ rw.T
    return make_result(out, (x,), lambda g: (rh.T @ g @ rw,))


def concat_channels(tensors):
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors:
        _require_rank4(t, "concat_channels")
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels extents disagree: {ref} vs {t.shape}")
    sizes = [t.shape[1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return make_result(out, tuple(tensors), _backward)


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sum_all(tensors):
    """Sum of equally shaped tensors, accumulated left to right."""
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total


def scale(x, factor):
    """Multiply by a learnable one-element tensor or a plain float."""
    if not isinstance(factor, Tensor):
        f = float(factor)
        return make_result(x.data * f, (x,), lambda g: (g * f,))
    if factor.size != 1:
        raise ShapeError(f"scale factor must have one element, got shape {factor.shape}")
    f = factor.data.reshape(-1)[0]

    def _backward(g):
        gf = np.array((g * x.data).sum()).reshape(factor.shape)
        return g * f, gf

    return make_result(x.data * f, (x, factor), _backward)


def add_scalar_param(x, bias):
    """Add a learnable one-element bias to every element."""
    if bias.size != 1:
        raise ShapeError(f"bias must have one element, got shape {bias.shape}")
    b = bias.data.reshape(-1)[0]
    return make_result(x.data + b, (x, bias),
                       lambda g: (g, np.array(g.sum()).reshape(bias.shape)))


def mse_loss(pred, target):
    """Mean over all elements of ``(pred - target)**2``; the target is a constant."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss needs equal shapes, got {pred.shape} and {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    out = np.array((diff * diff).sum() / count)
    return make_result(out, (pred,), lambda g: (g * 2.0 * diff / count,))


def bce_loss(pred, target, eps=1e-12):
    """Mean binary cross-entropy of probabilities against a soft target."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"bce_loss needs equal shapes, got {pred.shape} and {target.shape}")
    p = np.clip(pred.data, eps, 1.0 - eps)
    t = target.data
    count = p.size
    out = np.array(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).sum() / count)
    return make_result(out, (pred,), lambda g: (g * (p - t) / (p * (1.0 - p)) / count,))


LOSSES = {"mse": mse_loss, "bce": bce_loss}
