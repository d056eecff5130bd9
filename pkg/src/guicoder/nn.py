"""Layers with hand-written backward passes, losses, Adam and weight I/O.

Arrays are numpy float32 in normal use. Every function follows the dtype of
its inputs, so feeding float64 arrays gives the 64-bit shadow mode used for
finite-difference checks.

Forward functions return ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.
"""
import math
import struct

import numpy as np

from . import kernels
from .prng import uniform_block


class ShapeMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class BadTarget(ValueError):
    pass


class NonFinite(FloatingPointError):
    pass


class CorruptWeights(ValueError):
    pass


def _check(cond, msg):
    if not cond:
        raise ShapeMismatch(msg)


def check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"non-finite values in {name}")


# -- convolution / pooling --------------------------------------------------

def conv2d(x, w, b, stride=1, pad=1):
    """Zero-padded cross-correlation. ``x`` is (C,H,W) or (N,C,H,W)."""
    single = x.ndim == 3
    if single:
        x = x[None]
    _check(x.ndim == 4 and w.ndim == 4, "conv2d expects 4-d weights and 3/4-d input")
    co, ci, k, k2 = w.shape
    _check(k == k2 and x.shape[1] == ci and b.shape == (co,), "conv2d shape mismatch")
    n, _, h, wd = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    cols = kernels.im2col(x, k, stride, pad)
    wmat = w.reshape(co, -1)
    y = np.matmul(wmat, cols) + b[:, None]
    y = y.reshape(n, co, ho, wo)
    cache = (x.shape, cols, w, stride, pad, single)
    return (y[0] if single else y), cache


def conv2d_backward(dy, cache):
    x_shape, cols, w, stride, pad, single = cache
    if single:
        dy = dy[None]
    co = w.shape[0]
    n = dy.shape[0]
    dyf = dy.reshape(n, co, -1)
    db = dyf.sum(axis=(0, 2))
    dw = np.einsum("nol,nkl->ok", dyf, cols).reshape(w.shape)
    dcols = np.matmul(w.reshape(co, -1).T, dyf)
    dx = kernels.col2im(dcols, x_shape, w.shape[2], stride, pad)
    return (dx[0] if single else dx), dw, db


def maxpool2d(x, window=2, stride=2):
    single = x.ndim == 3
    if single:
        x = x[None]
    _check(x.shape[2] % stride == 0 and x.shape[3] % stride == 0,
           "maxpool2d needs H and W divisible by stride")
    y, arg = kernels.maxpool_forward(x, window, stride)
    return (y[0] if single else y), (x.shape, arg, single)


def maxpool2d_backward(dy, cache):
    x_shape, arg, single = cache
    if single:
        dy = dy[None]
    dx = kernels.maxpool_backward(dy, arg, x_shape)
    return dx[0] if single else dx


# -- dense -------------------------------------------------------------------

def linear(x, w, b):
    """``y = W x + b`` over the last axis of ``x``."""
    _check(w.ndim == 2 and x.shape[-1] == w.shape[1] and b.shape == (w.shape[0],),
           f"linear: input {x.shape} vs weight {w.shape}")
    return x @ w.T + b, x


def linear_backward(dy, x, w):
    dx = dy @ w
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, dy2.T @ x2, dy2.sum(axis=0)


# -- activations ---------------------------------------------------------------

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


# -- recurrent ---------------------------------------------------------------

def lstm_cell(x, h_prev, c_prev, w, b):
    """One LSTM step with gate packing [i, f, g, o].

    ``w`` is (4H, E+H) acting on the concatenation ``[x; h_prev]``. Inputs
    may be vectors or (B, .) batches.
    """
    single = x.ndim == 1
    if single:
        x, h_prev, c_prev = x[None], h_prev[None], c_prev[None]
    hid = h_prev.shape[-1]
    _check(w.shape == (4 * hid, x.shape[-1] + hid) and b.shape == (4 * hid,),
           f"lstm_cell: weight {w.shape} vs input {x.shape[-1]} hidden {hid}")
    xh = np.concatenate([x, h_prev], axis=-1)
    z = xh @ w.T + b
    h, c, gates, tc = kernels.lstm_pointwise_forward(z, c_prev)
    cache = (xh, c_prev, gates, tc, w, x.shape[-1], single)
    if single:
        return h[0], c[0], cache
    return h, c, cache


def lstm_cell_backward(dh, dc, cache):
    """Returns ``(dx, dh_prev, dc_prev, dw, db)``."""
    xh, c_prev, gates, tc, w, e, single = cache
    if single:
        dh, dc = dh[None], dc[None]
    dz, dc_prev = kernels.lstm_pointwise_backward(dh, dc, gates, c_prev, tc)
    dxh = dz @ w
    dw = dz.T @ xh
    db = dz.sum(axis=0)
    dx, dh_prev = dxh[:, :e], dxh[:, e:]
    if single:
        return dx[0], dh_prev[0], dc_prev[0], dw, db
    return dx, dh_prev, dc_prev, dw, db


# -- pooling over regions and attention --------------------------------------

def region_pool(nu):
    """Channel-wise max over regions: (L, D) -> (D), or (B, L, D) -> (B, D)."""
    if nu.shape[-2] < 1:
        raise EmptyInput("region_pool needs at least one region")
    arg = nu.argmax(axis=-2)
    return nu.max(axis=-2), (nu.shape, arg)


def region_pool_backward(dy, cache):
    shape, arg = cache
    dnu = np.zeros(shape, dtype=dy.dtype)
    np.put_along_axis(dnu, arg[..., None, :], dy[..., None, :], axis=-2)
    return dnu


def attention(nu, h, w_ev, w_eh, b_e, w_s):
    """Soft attention over regions.

    ``e_i = tanh(W_ev nu_i + W_eh h + b_e)``, ``s_i = w_s . e_i``,
    ``alpha = softmax(s)``, ``v_hat = sum_i alpha_i nu_i``.

    ``nu`` is (L, D) with ``h`` (H), or batched as (B, L, D) with (B, H).
    """
    _check(w_ev.shape[1] == nu.shape[-1] and w_eh.shape[1] == h.shape[-1]
           and w_ev.shape[0] == w_eh.shape[0] == b_e.shape[0] == w_s.shape[-1],
           "attention: weight shapes inconsistent with inputs")
    proj = nu @ w_ev.T + (h @ w_eh.T + b_e)[..., None, :]
    e = np.tanh(proj)
    s = e @ w_s.reshape(-1)
    alpha = softmax(s, axis=-1)
    v_hat = (alpha[..., None] * nu).sum(axis=-2)
    return alpha, v_hat, (nu, h, e, alpha, w_ev, w_eh, w_s)


def attention_backward(dv_hat, cache, dalpha=None):
    """Returns ``(dnu, dh, dw_ev, dw_eh, db_e, dw_s)``."""
    nu, h, e, alpha, w_ev, w_eh, w_s = cache
    w_s = w_s.reshape(-1)
    da = (nu * dv_hat[..., None, :]).sum(axis=-1)
    if dalpha is not None:
        da = da + dalpha
    ds = softmax_backward(da, alpha)
    dnu = alpha[..., None] * dv_hat[..., None, :]
    de = ds[..., None] * w_s
    dw_s = (ds[..., None] * e).reshape(-1, e.shape[-1]).sum(axis=0)
    dproj = de * (1.0 - e * e)
    dnu = dnu + dproj @ w_ev
    dproj2 = dproj.reshape(-1, dproj.shape[-1])
    dw_ev = dproj2.T @ nu.reshape(-1, nu.shape[-1])
    dq = dproj.sum(axis=-2)
    dh = dq @ w_eh
    dq2 = dq.reshape(-1, dq.shape[-1])
    dw_eh = dq2.T @ h.reshape(-1, h.shape[-1])
    db_e = dq2.sum(axis=0)
    return dnu, dh, dw_ev, dw_eh, db_e, dw_s.reshape(1, -1)


# -- losses and regularization -----------------------------------------------

def cross_entropy(logits, target):
    """``-log softmax(logits)[target]`` and its gradient wrt ``logits``."""
    k = logits.shape[-1]
    if not 0 <= target < k:
        raise BadTarget(f"target {target} outside [0, {k})")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[target] -= 1.0
    return float(-logp[target]), grad


def cross_entropy_masked(logits, targets, mask):
    """Summed cross-entropy over rows where ``mask`` is set.

    ``logits`` (..., K); ``targets`` and ``mask`` share the leading shape.
    Returns per-row losses (zeros where masked out) and the logits gradient.
    """
    logp = log_softmax(logits)
    tgt = np.where(mask, targets, 0)
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    losses = np.where(mask, -picked, 0.0)
    grad = np.exp(logp)
    np.put_along_axis(grad, tgt[..., None],
                      np.take_along_axis(grad, tgt[..., None], axis=-1) - 1.0, axis=-1)
    grad *= mask[..., None]
    return losses, grad


def dropout(x, rate, state, training=True):
    """Inverted dropout driven by SplitMix64; returns ``(y, mask, state)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x, None, state
    u, state = uniform_block(state, x.size)
    mask = (u.reshape(x.shape) >= rate).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask, state


# -- parameters and optimizer ------------------------------------------------

class ModelParams:
    """Named parameter tensors plus Adam moments and step counter."""

    def __init__(self, tensors, m=None, v=None, t=0):
        self.tensors = dict(tensors)
        self.m = m if m is not None else {k: np.zeros_like(a) for k, a in self.tensors.items()}
        self.v = v if v is not None else {k: np.zeros_like(a) for k, a in self.tensors.items()}
        self.t = t

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def names(self):
        return list(self.tensors)

    def astype(self, dtype):
        return ModelParams({k: a.astype(dtype) for k, a in self.tensors.items()},
                           {k: a.astype(dtype) for k, a in self.m.items()},
                           {k: a.astype(dtype) for k, a in self.v.items()}, self.t)

    def copy(self):
        return self.astype(next(iter(self.tensors.values())).dtype)


def adam_step(params, grads, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; increments ``params.t``."""
    for name, g in grads.items():
        if name not in params.tensors:
            raise ShapeMismatch(f"gradient for unknown parameter {name}")
        _check(g.shape == params.tensors[name].shape, f"gradient shape mismatch for {name}")
    params.t += 1
    bc1 = 1.0 - beta1 ** params.t
    bc2 = 1.0 - beta2 ** params.t
    for name, w in params.tensors.items():
        g = grads.get(name)
        if g is None:
            continue
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        w -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(w.dtype)
        check_finite(name, w)


def clip_global_norm(grads, max_norm):
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= g.dtype.type(scale)
    return total


def fans(shape):
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    if len(shape) == 2:
        return shape[1], shape[0]
    return shape[0], shape[0]


def init_params(spec, seed, dtype=np.float32):
    """Initialize parameters from ``spec``: a list of ``(name, shape, kind)``.

    ``kind`` is ``"weight"`` (Glorot-uniform from one SplitMix64 stream
    consumed in spec order), ``"relu_weight"`` (He-uniform, same stream,
    for layers followed by a ReLU), ``"bias"`` (zeros) or ``"lstm_bias"``
    (zeros with the forget-gate quarter set to 1).
    """
    state = seed
    tensors = {}
    for name, shape, kind in spec:
        shape = tuple(shape)
        if kind in ("weight", "relu_weight"):
            fan_in, fan_out = fans(shape)
            a = math.sqrt(6.0 / (fan_in if kind == "relu_weight" else fan_in + fan_out))
            u, state = uniform_block(state, int(np.prod(shape)))
            tensors[name] = ((2.0 * u - 1.0) * a).reshape(shape).astype(dtype)
        elif kind == "bias":
            tensors[name] = np.zeros(shape, dtype=dtype)
        elif kind == "lstm_bias":
            b = np.zeros(shape, dtype=dtype)
            hid = shape[0] // 4
            b[hid:2 * hid] = 1.0
            tensors[name] = b
        else:
            raise ValueError(f"unknown init kind {kind!r}")
    return ModelParams(tensors)


# -- weights file ------------------------------------------------------------

MAGIC = b"GUIW"
VERSION = 1


def _pack_tensor(name, arr):
    raw = name.encode("utf-8")
    arr = np.asarray(arr, dtype="<f4")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def dump_weights(params, extra=None):
    """Serialize parameters, Adam moments and ``t`` (plus optional scalars)."""
    items = list(params.tensors.items())
    items += [(f"__m.{k}", a) for k, a in params.m.items()]
    items += [(f"__v.{k}", a) for k, a in params.v.items()]
    items.append(("__t", np.array(params.t, dtype=np.float32)))
    for k, val in (extra or {}).items():
        items.append((k, np.array(val, dtype=np.float32)))
    out = [MAGIC, struct.pack("<II", VERSION, len(items))]
    out += [_pack_tensor(k, a) for k, a in items]
    return b"".join(out)


def load_weights(data):
    """Inverse of :func:`dump_weights`; returns ``(params, extra)``."""
    if data[:4] != MAGIC:
        raise CorruptWeights("corrupt weights: bad magic")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CorruptWeights(f"corrupt weights: unsupported version {version}")
        pos = 12
        raw = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if pos + 4 * size > len(data):
                raise CorruptWeights("corrupt weights: truncated payload")
            raw[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptWeights(f"corrupt weights: {exc}") from exc
    if pos != len(data):
        raise CorruptWeights("corrupt weights: trailing bytes")
    tensors = {k: a for k, a in raw.items() if not k.startswith("__")}
    m = {k: raw.get(f"__m.{k}", np.zeros_like(a)) for k, a in tensors.items()}
    v = {k: raw.get(f"__v.{k}", np.zeros_like(a)) for k, a in tensors.items()}
    t = int(raw["__t"]) if "__t" in raw else 0
    extra = {k: float(a) for k, a in raw.items()
             if k.startswith("__") and not k.startswith(("__m.", "__v.")) and k != "__t"}
    return ModelParams(tensors, m, v, t), extra


def save_weights(path, params, extra=None):
    with open(path, "wb") as f:
        f.write(dump_weights(params, extra))


def read_weights(path):
    with open(path, "rb") as f:
        return load_weights(f.read())
