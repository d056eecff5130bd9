"""Pure numpy implementations of the hot kernels.

Summation orders in ``col2im`` mirror the compiled version so both backends
accumulate overlapping contributions in the same (ki, kj) sequence.
"""
import numpy as np


def im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, x_shape, k, stride, pad):
    n, c, h, w = x_shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += cols[:, :, ki, kj]
    return dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp


def maxpool_forward(x, k, stride):
    """Window maxima plus the flat (row-major, per channel) argmax index.

    Ties resolve to the lowest flat index.
    """
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    best = None
    arg = None
    rows = np.arange(ho)[:, None] * stride
    cols = np.arange(wo)[None, :] * stride
    for ki in range(k):
        for kj in range(k):
            v = x[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
            idx = (rows + ki) * w + (cols + kj)
            if best is None:
                best = v.copy()
                arg = np.broadcast_to(idx, v.shape).copy()
            else:
                take = v > best
                best[take] = v[take]
                arg[take] = np.broadcast_to(idx, v.shape)[take]
    return best, arg


def maxpool_backward(dy, arg, x_shape):
    n, c, h, w = x_shape
    dx = np.zeros((n * c, h * w), dtype=dy.dtype)
    flat_arg = arg.reshape(n * c, -1)
    rows = np.repeat(np.arange(n * c), flat_arg.shape[1])
    np.add.at(dx, (rows, flat_arg.ravel()), dy.reshape(-1))
    return dx.reshape(x_shape)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_pointwise_forward(z, c_prev):
    """Gate nonlinearities and state update for packed pre-activations [i,f,g,o]."""
    hid = c_prev.shape[-1]
    i = _sigmoid(z[..., :hid])
    f = _sigmoid(z[..., hid:2 * hid])
    g = np.tanh(z[..., 2 * hid:3 * hid])
    o = _sigmoid(z[..., 3 * hid:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    gates = np.concatenate([i, f, g, o], axis=-1)
    return h, c, gates, tc


def lstm_pointwise_backward(dh, dc, gates, c_prev, tc):
    hid = c_prev.shape[-1]
    i = gates[..., :hid]
    f = gates[..., hid:2 * hid]
    g = gates[..., 2 * hid:3 * hid]
    o = gates[..., 3 * hid:]
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dc * i * (1.0 - g * g),
        dh * tc * o * (1.0 - o),
    ], axis=-1)
    return dz, dc * f
