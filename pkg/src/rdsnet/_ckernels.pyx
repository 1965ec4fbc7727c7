# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``.

Convolutions run channels-last so the innermost loop is a contiguous axpy,
blocked four rows at a time to keep the accumulator in registers. Blocking
never reorders the additions into any single output element, so each
element is accumulated in one fixed order (kernel row, kernel column,
channel for the forward pass) and results are bitwise reproducible.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def conv2d_forward(x, w, b, Py_ssize_t stride, Py_ssize_t pad):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(np.transpose(x, (0, 2, 3, 1)), dtype=np.float64)
    cdef const double[:, :, :, ::1] wv = np.ascontiguousarray(np.transpose(w, (2, 3, 1, 0)), dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], wd = xv.shape[2], c = xv.shape[3]
    cdef Py_ssize_t kh = wv.shape[0], kw = wv.shape[1], o = wv.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, ho, wo, o), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef const double[::1] bv
    cdef bint has_bias = b is not None
    if has_bias:
        bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t i, y, xx, ky, kx, iy, ix, ic, oc
    cdef double s0, s1, s2, s3, t
    cdef double* acc
    cdef const double* xp
    cdef const double* w0
    cdef const double* w1
    cdef const double* w2
    cdef const double* w3
    with nogil:
        for i in range(n):
            for y in range(ho):
                for xx in range(wo):
                    acc = &ov[i, y, xx, 0]
                    if has_bias:
                        for oc in range(o):
                            acc[oc] = bv[oc]
                    for ky in range(kh):
                        iy = y * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = xx * stride + kx - pad
                            if ix < 0 or ix >= wd:
                                continue
                            xp = &xv[i, iy, ix, 0]
                            ic = 0
                            while ic + 4 <= c:
                                s0 = xp[ic]
                                s1 = xp[ic + 1]
                                s2 = xp[ic + 2]
                                s3 = xp[ic + 3]
                                w0 = &wv[ky, kx, ic, 0]
                                w1 = w0 + o
                                w2 = w1 + o
                                w3 = w2 + o
                                for oc in range(o):
                                    t = acc[oc]
                                    t = t + s0 * w0[oc]
                                    t = t + s1 * w1[oc]
                                    t = t + s2 * w2[oc]
                                    t = t + s3 * w3[oc]
                                    acc[oc] = t
                                ic = ic + 4
                            while ic < c:
                                s0 = xp[ic]
                                w0 = &wv[ky, kx, ic, 0]
                                for oc in range(o):
                                    acc[oc] = acc[oc] + s0 * w0[oc]
                                ic = ic + 1
    return np.ascontiguousarray(np.transpose(out, (0, 3, 1, 2)))


def conv2d_grad_input(gout, w, Py_ssize_t in_h, Py_ssize_t in_w, Py_ssize_t stride, Py_ssize_t pad):
    cdef const double[:, :, :, ::1] gv = np.ascontiguousarray(np.transpose(gout, (0, 2, 3, 1)), dtype=np.float64)
    cdef const double[:, :, :, ::1] wv = np.ascontiguousarray(np.transpose(w, (2, 3, 0, 1)), dtype=np.float64)
    cdef Py_ssize_t n = gv.shape[0], ho = gv.shape[1], wo = gv.shape[2], o = gv.shape[3]
    cdef Py_ssize_t kh = wv.shape[0], kw = wv.shape[1], c = wv.shape[3]
    gin = np.zeros((n, in_h, in_w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] iv = gin
    cdef Py_ssize_t i, y, xx, ky, kx, iy, ix, ic, oc
    cdef double s0, s1, s2, s3, t
    cdef double* dst
    cdef const double* gp
    cdef const double* w0
    cdef const double* w1
    cdef const double* w2
    cdef const double* w3
    with nogil:
        for i in range(n):
            for y in range(ho):
                for xx in range(wo):
                    gp = &gv[i, y, xx, 0]
                    for ky in range(kh):
                        iy = y * stride + ky - pad
                        if iy < 0 or iy >= in_h:
                            continue
                        for kx in range(kw):
                            ix = xx * stride + kx - pad
                            if ix < 0 or ix >= in_w:
                                continue
                            dst = &iv[i, iy, ix, 0]
                            oc = 0
                            while oc + 4 <= o:
                                s0 = gp[oc]
                                s1 = gp[oc + 1]
                                s2 = gp[oc + 2]
                                s3 = gp[oc + 3]
                                w0 = &wv[ky, kx, oc, 0]
                                w1 = w0 + c
                                w2 = w1 + c
                                w3 = w2 + c
                                for ic in range(c):
                                    t = dst[ic]
                                    t = t + s0 * w0[ic]
                                    t = t + s1 * w1[ic]
                                    t = t + s2 * w2[ic]
                                    t = t + s3 * w3[ic]
                                    dst[ic] = t
                                oc = oc + 4
                            while oc < o:
                                s0 = gp[oc]
                                w0 = &wv[ky, kx, oc, 0]
                                for ic in range(c):
                                    dst[ic] = dst[ic] + s0 * w0[ic]
                                oc = oc + 1
    return np.ascontiguousarray(np.transpose(gin, (0, 3, 1, 2)))


def conv2d_grad_weight(gout, x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef const double[:, :, :, ::1] gv = np.ascontiguousarray(np.transpose(gout, (0, 2, 3, 1)), dtype=np.float64)
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(np.transpose(x, (0, 2, 3, 1)), dtype=np.float64)
    cdef Py_ssize_t n = gv.shape[0], ho = gv.shape[1], wo = gv.shape[2], o = gv.shape[3]
    cdef Py_ssize_t h = xv.shape[1], wd = xv.shape[2], c = xv.shape[3]
    gw = np.zeros((kh, kw, c, o), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = gw
    # (output pixel, input pixel) pairs valid for one kernel tap, in (n, y, x) order
    pairs_np = np.empty((n * ho * wo, 2), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] pairs = pairs_np
    cdef const double* gbase = &gv[0, 0, 0, 0]
    cdef const double* xbase = &xv[0, 0, 0, 0]
    cdef Py_ssize_t i, y, xx, ky, kx, iy, ix, ic, oc, npair, p
    cdef double s0, s1, s2, s3, t
    cdef double* dst
    cdef const double* g0
    cdef const double* g1
    cdef const double* g2
    cdef const double* g3
    with nogil:
        for ky in range(kh):
            for kx in range(kw):
                npair = 0
                for i in range(n):
                    for y in range(ho):
                        iy = y * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for xx in range(wo):
                            ix = xx * stride + kx - pad
                            if ix < 0 or ix >= wd:
                                continue
                            pairs[npair, 0] = ((i * ho + y) * wo + xx) * o
                            pairs[npair, 1] = ((i * h + iy) * wd + ix) * c
                            npair = npair + 1
                for ic in range(c):
                    dst = &ov[ky, kx, ic, 0]
                    p = 0
                    while p + 4 <= npair:
                        s0 = xbase[pairs[p, 1] + ic]
                        s1 = xbase[pairs[p + 1, 1] + ic]
                        s2 = xbase[pairs[p + 2, 1] + ic]
                        s3 = xbase[pairs[p + 3, 1] + ic]
                        g0 = gbase + pairs[p, 0]
                        g1 = gbase + pairs[p + 1, 0]
                        g2 = gbase + pairs[p + 2, 0]
                        g3 = gbase + pairs[p + 3, 0]
                        for oc in range(o):
                            t = dst[oc]
                            t = t + s0 * g0[oc]
                            t = t + s1 * g1[oc]
                            t = t + s2 * g2[oc]
                            t = t + s3 * g3[oc]
                            dst[oc] = t
                        p = p + 4
                    while p < npair:
                        s0 = xbase[pairs[p, 1] + ic]
                        g0 = gbase + pairs[p, 0]
                        for oc in range(o):
                            dst[oc] = dst[oc] + s0 * g0[oc]
                        p = p + 1
    return np.ascontiguousarray(np.transpose(gw, (3, 2, 0, 1)))


def crf_pairwise(q, pos, col, double w1, double w2, double theta_alpha,
                 double theta_beta, double theta_gamma, chunk=None):
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] pv = np.ascontiguousarray(pos, dtype=np.float64)
    cdef const double[:, ::1] cv = np.ascontiguousarray(col, dtype=np.float64)
    cdef Py_ssize_t npix = qv.shape[0], nlab = qv.shape[1], nch = cv.shape[1]
    out = np.zeros((npix, nlab), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double ia = 1.0 / (2.0 * theta_alpha * theta_alpha)
    cdef double ib = 1.0 / (2.0 * theta_beta * theta_beta)
    cdef double ig = 1.0 / (2.0 * theta_gamma * theta_gamma)
    cdef Py_ssize_t i, j, ch, lab
    cdef double dp, dc, d, k
    with nogil:
        for i in range(npix):
            for j in range(npix):
                if j == i:
                    continue
                d = pv[i, 0] - pv[j, 0]
                dp = d * d
                d = pv[i, 1] - pv[j, 1]
                dp = dp + d * d
                dc = 0.0
                for ch in range(nch):
                    d = cv[i, ch] - cv[j, ch]
                    dc = dc + d * d
                k = w1 * exp(-dp * ia - dc * ib) + w2 * exp(-dp * ig)
                for lab in range(nlab):
                    ov[i, lab] += k * qv[j, lab]
    return out
