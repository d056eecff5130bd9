"""Central finite-difference checks for every layer and the full model.

All checks run in float64. Each layer is reduced to a scalar through a fixed
random projection ``sum(out * R)``; the analytic gradient from the layer's
backward pass is compared against ``(f(x+h) - f(x-h)) / 2h``.
"""
from dataclasses import dataclass

import numpy as np

from . import dsl, model, nn, synth
from .render import render

H = 1e-5
LAYER_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    rel_error: float
    tol: float

    @property
    def ok(self):
        return self.rel_error < self.tol


def rel_error(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def numeric_grad(f, x, idx=None, h=H):
    """Central differences of scalar ``f()`` wrt the entries of ``x`` (mutated in place)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def _check_all(name, f, inputs, grads, tol=LAYER_TOL):
    num = np.concatenate([numeric_grad(f, x) for x in inputs])
    ana = np.concatenate([np.ravel(g) for g in grads])
    return CheckResult(name, rel_error(ana, num), tol)


def check_conv2d(rng):
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    r = rng.standard_normal((3, 5, 5))
    y, cache = nn.conv2d(x, w, b)
    dx, dw, db = nn.conv2d_backward(r, cache)
    return _check_all("conv2d", lambda: float((nn.conv2d(x, w, b)[0] * r).sum()),
                      [x, w, b], [dx, dw, db])


def check_maxpool(rng):
    # distinct values keep every window away from ties
    x = rng.permutation(2 * 6 * 6).reshape(2, 6, 6) * 0.1 + rng.uniform(0, 0.01, (2, 6, 6))
    r = rng.standard_normal((2, 3, 3))
    _, cache = nn.maxpool2d(x)
    dx = nn.maxpool2d_backward(r, cache)
    return _check_all("maxpool2d", lambda: float((nn.maxpool2d(x)[0] * r).sum()), [x], [dx])


def check_linear(rng):
    x = rng.standard_normal(6)
    w = rng.standard_normal((4, 6))
    b = rng.standard_normal(4)
    r = rng.standard_normal(4)
    y, xc = nn.linear(x, w, b)
    dx, dw, db = nn.linear_backward(r, xc, w)
    return _check_all("linear", lambda: float((nn.linear(x, w, b)[0] * r).sum()),
                      [x, w, b], [dx, dw, db])


def _lstm_chain(xs, h0, c0, w, b):
    h, c = h0, c0
    hs, caches = [], []
    for x in xs:
        h, c, cache = nn.lstm_cell(x, h, c, w, b)
        hs.append(h)
        caches.append(cache)
    return np.stack(hs), c, caches


def check_lstm(rng, steps=3):
    e, hid = 3, 4
    xs = rng.standard_normal((steps, e))
    h0 = rng.standard_normal(hid)
    c0 = rng.standard_normal(hid)
    w = rng.standard_normal((4 * hid, e + hid)) * 0.5
    b = rng.standard_normal(4 * hid) * 0.5
    rh = rng.standard_normal((steps, hid))
    rc = rng.standard_normal(hid)

    def f():
        hs, c, _ = _lstm_chain(xs, h0, c0, w, b)
        return float((hs * rh).sum() + (c * rc).sum())

    hs, c, caches = _lstm_chain(xs, h0, c0, w, b)
    dxs = np.zeros_like(xs)
    dw = np.zeros_like(w)
    db = np.zeros_like(b)
    dh, dc = np.zeros(hid), rc.copy()
    for t in range(steps - 1, -1, -1):
        dx, dh, dc, gw, gb = nn.lstm_cell_backward(rh[t] + dh, dc, caches[t])
        dxs[t] = dx
        dw += gw
        db += gb
    return _check_all(f"lstm_cell ({steps}-step BPTT)", f, [xs, h0, c0, w, b],
                      [dxs, dh, dc, dw, db])


def check_region_pool(rng):
    nu = rng.permutation(5 * 3).reshape(5, 3) * 0.1 + rng.uniform(0, 0.01, (5, 3))
    r = rng.standard_normal(3)
    _, cache = nn.region_pool(nu)
    dnu = nn.region_pool_backward(r, cache)
    return _check_all("region_pool", lambda: float((nn.region_pool(nu)[0] * r).sum()),
                      [nu], [dnu])


def check_attention(rng):
    l, d, hid, a = 5, 3, 4, 6
    nu = rng.standard_normal((l, d))
    h = rng.standard_normal(hid)
    w_ev = rng.standard_normal((a, d))
    w_eh = rng.standard_normal((a, hid))
    b_e = rng.standard_normal(a)
    w_s = rng.standard_normal((1, a))
    rv = rng.standard_normal(d)
    ra = rng.standard_normal(l)

    def f():
        alpha, v_hat, _ = nn.attention(nu, h, w_ev, w_eh, b_e, w_s)
        return float((v_hat * rv).sum() + (alpha * ra).sum())

    _, _, cache = nn.attention(nu, h, w_ev, w_eh, b_e, w_s)
    grads = nn.attention_backward(rv, cache, dalpha=ra)
    return _check_all("attention", f, [nu, h, w_ev, w_eh, b_e, w_s], grads)


def check_cross_entropy(rng):
    logits = rng.standard_normal(7)
    _, g = nn.cross_entropy(logits, 3)
    return _check_all("cross_entropy", lambda: nn.cross_entropy(logits, 3)[0], [logits], [g])


def micro_setup(seed=0):
    """Tiny model + one rendered example for the end-to-end check."""
    cfg = model.ModelConfig(image_size=32, conv=(2, 3, 4), hidden=8, embed=8, attn=4,
                            max_tokens=8, dropout=0.5)
    gen = synth.GenConfig(min_rows=2, max_rows=2, min_leaves=1, max_leaves=2,
                          image_size=32, seed=seed)
    ast = synth.example_program(gen, 0)
    image = synth.image_tensor(render(ast, 32, 32), np.float64)
    params = model.init_model(cfg, seed, np.float64)
    rng = np.random.default_rng(seed)
    for name, arr in params.tensors.items():
        # nonzero biases keep pre-activations off the relu kink on flat image areas
        arr += rng.uniform(-0.1, 0.1, arr.shape)
    return cfg, image, dsl.ast_tokens(ast), params


def check_model(seed=0, per_tensor=12):
    cfg, image, ids, params = micro_setup(seed)
    rng = np.random.default_rng(seed + 1)
    drop_state = 12345

    def f():
        return model.forward_train(image, ids, params, cfg.dropout, drop_state)[0]

    _, grads = model.forward_train(image, ids, params, cfg.dropout, drop_state)
    ana, num = [], []
    for name, arr in params.tensors.items():
        n = arr.size
        idx = rng.choice(n, size=min(per_tensor, n), replace=False)
        ana.append(grads[name].reshape(-1)[idx])
        num.append(numeric_grad(f, arr, idx))
    return CheckResult("end-to-end model", rel_error(np.concatenate(ana), np.concatenate(num)),
                       MODEL_TOL)


LAYER_CHECKS = (check_conv2d, check_maxpool, check_linear, check_lstm, check_region_pool,
                check_attention, check_cross_entropy)


def run_all(seed=0):
    rng = np.random.default_rng(seed)
    results = [check(rng) for check in LAYER_CHECKS]
    results.append(check_model(seed))
    return results
