"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow the desk preset (batch 8, 64x64 images) so the numbers line
up with what training actually spends time on. The package wrapper sends
large LSTM batches to numpy, whose vectorized tanh wins there; the 1x64 row
is the single-example decoding case that stays compiled.
"""
import argparse
import timeit

import numpy as np

from guicoder.kernels import _numpy

try:
    from guicoder.kernels import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    x1 = rng.random((8, 5, 64, 64), dtype=np.float32)
    x3 = rng.random((8, 16, 16, 16), dtype=np.float32)
    cols = _numpy.im2col(x3, 3, 1, 1)
    y, arg = _numpy.maxpool_forward(x1, 2, 2)
    z = rng.standard_normal((64, 256)).astype(np.float32)
    c = rng.standard_normal((64, 64)).astype(np.float32)
    z1, c1 = z[:1].copy(), c[:1].copy()
    h, c2, gates, tc = _numpy.lstm_pointwise_forward(z, c)
    return [
        ("im2col 8x5x64x64", lambda m: m.im2col(x1, 3, 1, 1)),
        ("col2im 8x16x16x16", lambda m: m.col2im(cols, x3.shape, 3, 1, 1)),
        ("maxpool fwd 8x5x64x64", lambda m: m.maxpool_forward(x1, 2, 2)),
        ("maxpool bwd 8x5x64x64", lambda m: m.maxpool_backward(y, arg, x1.shape)),
        ("lstm fwd 1x64 (decode)", lambda m: m.lstm_pointwise_forward(z1, c1)),
        ("lstm fwd 64x64", lambda m: m.lstm_pointwise_forward(z, c)),
        ("lstm bwd 64x64", lambda m: m.lstm_pointwise_backward(h, c2, gates, c, tc)),
    ]


def best_of(fn, repeat):
    number = 20
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'numpy us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for name, call in cases(rng):
        t_np = best_of(lambda: call(_numpy), args.repeat)
        t_cy = best_of(lambda: call(_ckernels), args.repeat)
        print(f"{name:24s} {t_np * 1e6:10.1f} {t_cy * 1e6:10.1f} {t_np / t_cy:7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
