# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_numpy.py`` (same signatures)."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, expf, tanh, tanhf

cnp.import_array()


def im2col(floating[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c * k * k, ho * wo), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, row, lo, hi
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        # output columns whose input column lands inside the image
                        lo = 0
                        while lo < wo and lo * stride + kj - pad < 0:
                            lo += 1
                        hi = wo
                        while hi > lo and (hi - 1) * stride + kj - pad >= w:
                            hi -= 1
                        for oy in range(ho):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(lo, hi):
                                cols[b, row, oy * wo + ox] = x[b, ch, iy, ox * stride + kj - pad]
    return out


def col2im(floating[:, :, ::1] cols, x_shape, int k, int stride, int pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oy in range(ho):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * stride + kj - pad
                                if 0 <= ix < w:
                                    dx[b, ch, iy, ix] += cols[b, row, oy * wo + ox]
    return out


def maxpool_forward(floating[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n, c, ho, wo), dtype=dtype)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.intp)
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, oy, ox, ki, kj, iy, ix, best_i
    cdef floating best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        iy = oy * stride
                        ix = ox * stride
                        best = x[b, ch, iy, ix]
                        best_i = iy * w + ix
                        for ki in range(k):
                            for kj in range(k):
                                v = x[b, ch, iy + ki, ix + kj]
                                if v > best:
                                    best = v
                                    best_i = (iy + ki) * w + ix + kj
                        y[b, ch, oy, ox] = best
                        arg[b, ch, oy, ox] = best_i
    return out, arg_arr


def maxpool_backward(floating[:, :, :, ::1] dy, Py_ssize_t[:, :, :, ::1] arg, x_shape):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c, h * w), dtype=dtype)
    cdef floating[:, :, ::1] dx = out
    cdef Py_ssize_t b, ch, oy, ox
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(dy.shape[2]):
                    for ox in range(dy.shape[3]):
                        dx[b, ch, arg[b, ch, oy, ox]] += dy[b, ch, oy, ox]
    return out.reshape(tuple(x_shape))


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return tanhf(x)
    return tanh(x)


cdef inline floating _sig(floating x) noexcept nogil:
    if floating is float:
        return 1.0 / (1.0 + expf(-x))
    return 1.0 / (1.0 + exp(-x))


def lstm_pointwise_forward(floating[:, ::1] z, floating[:, ::1] c_prev):
    cdef Py_ssize_t n = c_prev.shape[0], hid = c_prev.shape[1]
    dtype = np.float32 if floating is float else np.float64
    h_arr = np.empty((n, hid), dtype=dtype)
    c_arr = np.empty((n, hid), dtype=dtype)
    g_arr = np.empty((n, 4 * hid), dtype=dtype)
    t_arr = np.empty((n, hid), dtype=dtype)
    cdef floating[:, ::1] h = h_arr, c = c_arr, gates = g_arr, tc = t_arr
    cdef Py_ssize_t b, j
    cdef floating gi, gf, gg, go, cc
    with nogil:
        for b in range(n):
            for j in range(hid):
                gi = _sig(z[b, j])
                gf = _sig(z[b, hid + j])
                gg = _tanh(z[b, 2 * hid + j])
                go = _sig(z[b, 3 * hid + j])
                cc = gf * c_prev[b, j] + gi * gg
                gates[b, j] = gi
                gates[b, hid + j] = gf
                gates[b, 2 * hid + j] = gg
                gates[b, 3 * hid + j] = go
                c[b, j] = cc
                tc[b, j] = _tanh(cc)
                h[b, j] = go * tc[b, j]
    return h_arr, c_arr, g_arr, t_arr


def lstm_pointwise_backward(floating[:, ::1] dh, floating[:, ::1] dc_in, floating[:, ::1] gates,
                            floating[:, ::1] c_prev, floating[:, ::1] tc):
    cdef Py_ssize_t n = c_prev.shape[0], hid = c_prev.shape[1]
    dtype = np.float32 if floating is float else np.float64
    dz_arr = np.empty((n, 4 * hid), dtype=dtype)
    dcp_arr = np.empty((n, hid), dtype=dtype)
    cdef floating[:, ::1] dz = dz_arr, dcp = dcp_arr
    cdef Py_ssize_t b, j
    cdef floating gi, gf, gg, go, t, dc
    with nogil:
        for b in range(n):
            for j in range(hid):
                gi = gates[b, j]
                gf = gates[b, hid + j]
                gg = gates[b, 2 * hid + j]
                go = gates[b, 3 * hid + j]
                t = tc[b, j]
                dc = dc_in[b, j] + dh[b, j] * go * (1 - t * t)
                dz[b, j] = dc * gg * gi * (1 - gi)
                dz[b, hid + j] = dc * c_prev[b, j] * gf * (1 - gf)
                dz[b, 2 * hid + j] = dc * gi * (1 - gg * gg)
                dz[b, 3 * hid + j] = dh[b, j] * t * go * (1 - go)
                dcp[b, j] = dc * gf
    return dz_arr, dcp_arr
