"""Hot kernels: compiled extension when built, numpy otherwise.

Set ``GUICODER_PURE=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _numpy

BACKEND = "numpy"
_impl = _numpy
if os.environ.get("GUICODER_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _numpy

_NAMES = (
    "im2col", "col2im", "maxpool_forward", "maxpool_backward",
    "lstm_pointwise_forward", "lstm_pointwise_backward",
)


def use(backend):
    """Switch the active backend at runtime (``"cython"`` or ``"numpy"``)."""
    global BACKEND, _impl
    if backend == "numpy":
        _impl = _numpy
    elif backend == "cython":
        from . import _ckernels
        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {backend!r}")
    BACKEND = backend


def im2col(x, k, stride, pad):
    # numpy's strided slice copies already run at memcpy speed here, and the
    # compiled loop measured slightly slower (see benchmarks/bench_kernels.py)
    return _numpy.im2col(np.ascontiguousarray(x), k, stride, pad)


def col2im(cols, x_shape, k, stride, pad):
    return _impl.col2im(np.ascontiguousarray(cols), tuple(x_shape), k, stride, pad)


def maxpool_forward(x, k, stride):
    return _impl.maxpool_forward(np.ascontiguousarray(x), k, stride)


def maxpool_backward(dy, arg, x_shape):
    return _impl.maxpool_backward(np.ascontiguousarray(dy), np.ascontiguousarray(arg), tuple(x_shape))


# Above this many cell units numpy's vectorized tanh beats the scalar loop.
LSTM_COMPILED_MAX = 256


def lstm_pointwise_forward(z, c_prev):
    impl = _impl if c_prev.size <= LSTM_COMPILED_MAX else _numpy
    return impl.lstm_pointwise_forward(np.ascontiguousarray(z), np.ascontiguousarray(c_prev))


def lstm_pointwise_backward(dh, dc, gates, c_prev, tc):
    c = np.ascontiguousarray
    return _impl.lstm_pointwise_backward(c(dh), c(dc), c(gates), c(c_prev), c(tc))
