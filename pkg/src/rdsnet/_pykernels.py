"""Pure numpy implementations of the hot kernels.

This module is the fallback used when the compiled ``_ckernels`` extension
is not available. Every function here has a twin with the same signature in
``_ckernels.pyx``; the two are checked against each other and against
brute-force oracles in the test suite.

Convolution results are accumulated tap by tap in kernel-row-major order, so
repeated calls with identical inputs give bitwise-identical outputs.
"""
import numpy as np


def _tap_range(out_len, in_len, offset, stride):
    """Output indices ``o`` with ``0 <= o*stride + offset < in_len``."""
    lo = (-offset + stride - 1) // stride if offset < 0 else 0
    last = in_len - 1 - offset
    hi = min(out_len, last // stride + 1) if last >= 0 else 0
    return lo, max(lo, hi)


def conv2d_forward(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    if b is not None:
        out += b[None, :, None, None]
    for ky in range(kh):
        y0, y1 = _tap_range(ho, h, ky - pad, stride)
        if y0 >= y1:
            continue
        for kx in range(kw):
            x0, x1 = _tap_range(wo, wd, kx - pad, stride)
            if x0 >= x1:
                continue
            iy = y0 * stride + ky - pad
            ix = x0 * stride + kx - pad
            patch = x[:, :, iy:iy + (y1 - y0 - 1) * stride + 1:stride,
                      ix:ix + (x1 - x0 - 1) * stride + 1:stride]
            # (o, c) x (n, c, yy, xx) -> (o, n, yy, xx)
            contrib = np.tensordot(w[:, :, ky, kx], patch, axes=([1], [1]))
            out[:, :, y0:y1, x0:x1] += contrib.transpose(1, 0, 2, 3)
    return out


def conv2d_grad_input(gout, w, in_h, in_w, stride, pad):
    n, o, ho, wo = gout.shape
    _, c, kh, kw = w.shape
    gin = np.zeros((n, c, in_h, in_w), dtype=np.float64)
    for ky in range(kh):
        y0, y1 = _tap_range(ho, in_h, ky - pad, stride)
        if y0 >= y1:
            continue
        for kx in range(kw):
            x0, x1 = _tap_range(wo, in_w, kx - pad, stride)
            if x0 >= x1:
                continue
            iy = y0 * stride + ky - pad
            ix = x0 * stride + kx - pad
            # (o, c) x (n, o, yy, xx) -> (c, n, yy, xx)
            contrib = np.tensordot(w[:, :, ky, kx], gout[:, :, y0:y1, x0:x1], axes=([0], [1]))
            gin[:, :, iy:iy + (y1 - y0 - 1) * stride + 1:stride,
                ix:ix + (x1 - x0 - 1) * stride + 1:stride] += contrib.transpose(1, 0, 2, 3)
    return gin


def conv2d_grad_weight(gout, x, kh, kw, stride, pad):
    n, o, ho, wo = gout.shape
    _, c, h, wd = x.shape
    gw = np.zeros((o, c, kh, kw), dtype=np.float64)
    for ky in range(kh):
        y0, y1 = _tap_range(ho, h, ky - pad, stride)
        if y0 >= y1:
            continue
        for kx in range(kw):
            x0, x1 = _tap_range(wo, wd, kx - pad, stride)
            if x0 >= x1:
                continue
            iy = y0 * stride + ky - pad
            ix = x0 * stride + kx - pad
            patch = x[:, :, iy:iy + (y1 - y0 - 1) * stride + 1:stride,
                      ix:ix + (x1 - x0 - 1) * stride + 1:stride]
            gw[:, :, ky, kx] = np.tensordot(gout[:, :, y0:y1, x0:x1], patch,
                                            axes=([0, 2, 3], [0, 2, 3]))
    return gw


def crf_pairwise(q, pos, col, w1, w2, theta_alpha, theta_beta, theta_gamma, chunk=256):
    """Dense Gaussian message pass over all pixel pairs except self-pairs.

    ``q`` is ``(npix, labels)``; returns ``m[i, l] = sum_{j != i} k(i, j) q[j, l]``
    with ``k`` the appearance plus smoothness kernel.
    """
    npix = q.shape[0]
    out = np.empty_like(q, dtype=np.float64)
    ia = 1.0 / (2.0 * theta_alpha * theta_alpha)
    ib = 1.0 / (2.0 * theta_beta * theta_beta)
    ig = 1.0 / (2.0 * theta_gamma * theta_gamma)
    for start in range(0, npix, chunk):
        stop = min(npix, start + chunk)
        dp = ((pos[start:stop, None, :] - pos[None, :, :]) ** 2).sum(-1)
        dc = ((col[start:stop, None, :] - col[None, :, :]) ** 2).sum(-1)
        k = w1 * np.exp(-dp * ia - dc * ib) + w2 * np.exp(-dp * ig)
        rows = np.arange(start, stop)
        k[rows - start, rows] = 0.0
        out[start:stop] = k @ q
    return out
