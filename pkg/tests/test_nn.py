import math

import numpy as np
import pytest

from guicoder import gradcheck, nn


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 5, 5)).astype(np.float32)
    w = np.zeros((2, 2, 1, 1), np.float32)
    w[0, 0, 0, 0] = w[1, 1, 0, 0] = 1.0
    y, _ = nn.conv2d(x, w, np.zeros(2, np.float32), pad=0)
    np.testing.assert_array_equal(y, x)


def test_conv_zero_weights_gives_bias(rng):
    x = rng.standard_normal((3, 6, 6)).astype(np.float32)
    y, _ = nn.conv2d(x, np.zeros((4, 3, 3, 3), np.float32), np.arange(4, dtype=np.float32))
    assert y.shape == (4, 6, 6)
    for c in range(4):
        assert np.all(y[c] == c)


def test_conv_matches_direct_sum(rng):
    x = rng.standard_normal((2, 2, 4, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    y, _ = nn.conv2d(x, w, b)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 3, 4, 5))
    for n in range(2):
        for o in range(3):
            for i in range(4):
                for j in range(5):
                    ref[n, o, i, j] = (xp[n, :, i:i + 3, j:j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(y, ref, rtol=1e-12)


def test_conv_shape_mismatch():
    with pytest.raises(nn.ShapeMismatch):
        nn.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


def test_maxpool():
    y, _ = nn.maxpool2d(np.full((1, 4, 4), 3.0))
    assert np.all(y == 3.0) and y.shape == (1, 2, 2)
    y, _ = nn.maxpool2d(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert y.item() == 4.0
    with pytest.raises(nn.ShapeMismatch):
        nn.maxpool2d(np.zeros((1, 3, 4)))


def test_maxpool_tie_routes_to_lowest_index():
    x = np.ones((1, 2, 2))
    _, cache = nn.maxpool2d(x)
    dx = nn.maxpool2d_backward(np.array([[[5.0]]]), cache)
    np.testing.assert_array_equal(dx, [[[5.0, 0.0], [0.0, 0.0]]])


def test_linear():
    x = np.array([1.0, -2.0, 3.0])
    y, _ = nn.linear(x, np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(y, x)
    y, _ = nn.linear(x, np.zeros((2, 3)), np.array([4.0, 5.0]))
    np.testing.assert_array_equal(y, [4.0, 5.0])
    with pytest.raises(nn.ShapeMismatch):
        nn.linear(x, np.zeros((2, 4)), np.zeros(2))


def test_lstm_zero_weights_closed_form():
    hid, e = 3, 2
    c = np.array([1.0, -2.0, 0.5])
    w = np.zeros((4 * hid, e + hid))
    h2, c2, _ = nn.lstm_cell(np.ones(e), np.ones(hid), c, w, np.zeros(4 * hid))
    np.testing.assert_allclose(c2, 0.5 * c)
    np.testing.assert_allclose(h2, 0.5 * np.tanh(0.5 * c))


def test_lstm_zero_input_and_state(rng):
    hid, e = 4, 3
    w = rng.standard_normal((4 * hid, e + hid))
    h, c, _ = nn.lstm_cell(np.zeros(e), np.zeros(hid), np.zeros(hid), w, np.zeros(4 * hid))
    np.testing.assert_array_equal(h, 0.0)


def test_lstm_shape_mismatch():
    with pytest.raises(nn.ShapeMismatch):
        nn.lstm_cell(np.zeros(3), np.zeros(4), np.zeros(4), np.zeros((16, 6)), np.zeros(16))


def test_activations():
    assert nn.sigmoid(np.array(0.0)) == 0.5
    np.testing.assert_allclose(nn.softmax(np.full(4, 2.5)), 0.25)
    np.testing.assert_array_equal(nn.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    big = nn.softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(big)) and big[0] == 1.0


def test_softmax_sums_to_one_property(rng):
    for _ in range(1000):
        x = (rng.standard_normal(rng.integers(1, 20)) * rng.uniform(0.1, 50)).astype(np.float32)
        p = nn.softmax(x)
        assert np.all(p >= 0) and abs(float(p.sum(dtype=np.float64)) - 1.0) < 1e-6


def test_region_pool():
    v, _ = nn.region_pool(np.array([[1.0, 5.0], [3.0, 2.0]]))
    np.testing.assert_array_equal(v, [3.0, 5.0])
    row = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(nn.region_pool(row)[0], row[0])
    with pytest.raises(nn.EmptyInput):
        nn.region_pool(np.zeros((0, 3)))


def test_region_pool_dominates_rows(rng):
    nu = rng.standard_normal((7, 5))
    vp, _ = nn.region_pool(nu)
    assert np.all(vp[None, :] >= nu)


def _att_weights(rng, d=3, hid=4, a=5):
    return (rng.standard_normal((a, d)), rng.standard_normal((a, hid)),
            rng.standard_normal(a), rng.standard_normal((1, a)))


def test_attention_zero_scores_is_mean(rng):
    nu = rng.standard_normal((6, 3))
    w_ev, w_eh, b_e, _ = _att_weights(rng)
    alpha, v_hat, _ = nn.attention(nu, rng.standard_normal(4), w_ev, w_eh, b_e, np.zeros((1, 5)))
    np.testing.assert_allclose(alpha, 1 / 6)
    np.testing.assert_allclose(v_hat, nu.mean(axis=0))


def test_attention_single_region(rng):
    nu = rng.standard_normal((1, 3))
    alpha, v_hat, _ = nn.attention(nu, rng.standard_normal(4), *_att_weights(rng))
    np.testing.assert_allclose(alpha, [1.0])
    np.testing.assert_allclose(v_hat, nu[0])


def test_attention_batched_matches_single(rng):
    nu = rng.standard_normal((3, 6, 3))
    h = rng.standard_normal((3, 4))
    w = _att_weights(rng)
    alpha, v_hat, _ = nn.attention(nu, h, *w)
    for b in range(3):
        a1, v1, _ = nn.attention(nu[b], h[b], *w)
        np.testing.assert_allclose(alpha[b], a1)
        np.testing.assert_allclose(v_hat[b], v1)


def test_cross_entropy():
    loss, g = nn.cross_entropy(np.zeros(4), 2)
    assert abs(loss - math.log(4)) < 1e-12 and abs(loss - 1.386294) < 1e-6
    np.testing.assert_allclose(g, [0.25, 0.25, -0.75, 0.25])
    loss, _ = nn.cross_entropy(np.array([0.0, 200.0, 0.0]), 1)
    assert loss < 1e-12
    with pytest.raises(nn.BadTarget):
        nn.cross_entropy(np.zeros(4), 4)


def test_cross_entropy_masked_matches_rowwise(rng):
    logits = rng.standard_normal((3, 5))
    targets = np.array([1, 4, 0])
    mask = np.array([True, False, True])
    losses, grad = nn.cross_entropy_masked(logits, targets, mask)
    for i in range(3):
        loss, g = nn.cross_entropy(logits[i], targets[i])
        if mask[i]:
            assert abs(losses[i] - loss) < 1e-12
            np.testing.assert_allclose(grad[i], g)
        else:
            assert losses[i] == 0 and np.all(grad[i] == 0)


def test_dropout_identity_cases(rng):
    x = rng.standard_normal(100).astype(np.float32)
    assert nn.dropout(x, 0.0, 1)[0] is x
    assert nn.dropout(x, 0.5, 1, training=False)[0] is x
    with pytest.raises(ValueError):
        nn.dropout(x, 1.0, 1)


def test_dropout_preserves_expectation():
    x = np.full(100_000, 2.0)
    y, mask, state = nn.dropout(x, 0.5, 2024)
    assert abs(y.mean() - 2.0) / 2.0 < 0.01
    assert set(np.unique(y)) == {0.0, 4.0}
    y2, _, _ = nn.dropout(x, 0.5, 2024)
    np.testing.assert_array_equal(y, y2)
    assert state != 2024


def test_adam_first_step_and_zero_grad():
    p = nn.ModelParams({"w": np.zeros(5, np.float32)})
    nn.adam_step(p, {"w": np.ones(5, np.float32)})
    np.testing.assert_allclose(p["w"], -0.001 / (1 + 1e-8), rtol=1e-6)
    assert p.t == 1
    q = nn.ModelParams({"w": np.full(3, 0.7, np.float32)})
    nn.adam_step(q, {"w": np.zeros(3, np.float32)})
    np.testing.assert_array_equal(q["w"], np.float32(0.7))
    assert q.t == 1


def test_adam_shape_mismatch():
    p = nn.ModelParams({"w": np.zeros(5, np.float32)})
    with pytest.raises(nn.ShapeMismatch):
        nn.adam_step(p, {"w": np.ones(4, np.float32)})


def test_adam_minimizes_square():
    p = nn.ModelParams({"w": np.array([1.0])})
    traj = []
    for _ in range(100):
        nn.adam_step(p, {"w": 2 * p["w"]})
        traj.append(abs(float(p["w"][0])))
    assert all(b < a for a, b in zip(traj[5:], traj[6:]))
    assert traj[-1] < 0.95
    assert np.all(np.isfinite(p["w"])) and p["w"].shape == (1,)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = nn.clip_global_norm(g, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])


LAYOUT = [("conv.w", (4, 3, 3, 3), "weight"), ("conv.b", (4,), "bias"),
        ("lin.w", (6, 5), "weight"), ("lstm.b", (8,), "lstm_bias")]


def test_init_params():
    a = nn.init_params(LAYOUT, 3)
    b = nn.init_params(LAYOUT, 3)
    for k in a.names():
        assert a[k].tobytes() == b[k].tobytes()
    assert np.all(a["conv.b"] == 0)
    np.testing.assert_array_equal(a["lstm.b"], [0, 0, 1, 1, 0, 0, 0, 0])
    bound = math.sqrt(6 / (27 + 36))
    assert np.all(np.abs(a["conv.w"]) < bound)
    assert np.abs(a["conv.w"]).max() > 0.8 * bound
    assert np.all(np.abs(a["lin.w"]) < math.sqrt(6 / 11))
    assert nn.init_params(LAYOUT, 4)["lin.w"].tobytes() != a["lin.w"].tobytes()


def test_weights_round_trip():
    p = nn.init_params(LAYOUT, 1)
    nn.adam_step(p, {k: np.ones_like(v) for k, v in p.tensors.items()})
    data = nn.dump_weights(p, {"__cfg.max_tokens": 16})
    assert data[:4] == b"GUIW"
    q, extra = nn.load_weights(data)
    assert q.t == 1 and extra == {"__cfg.max_tokens": 16.0}
    for k in p.names():
        np.testing.assert_array_equal(q[k], p[k])
        np.testing.assert_array_equal(q.m[k], p.m[k])
        np.testing.assert_array_equal(q.v[k], p.v[k])
    assert nn.dump_weights(q, extra) == data


@pytest.mark.parametrize("mutate", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:-3],
    lambda d: d + b"\x00",
    lambda d: d[:4] + b"\x02" + d[5:],
])
def test_corrupt_weights(mutate):
    data = nn.dump_weights(nn.init_params(LAYOUT, 1))
    with pytest.raises(nn.CorruptWeights):
        nn.load_weights(mutate(data))


@pytest.mark.parametrize("check", gradcheck.LAYER_CHECKS, ids=lambda f: f.__name__)
def test_layer_gradients(check):
    res = check(np.random.default_rng(1))
    assert res.rel_error < 1e-4, res


def test_numeric_grad_oracle_on_known_function():
    x = np.array([1.0, 2.0])
    num = gradcheck.numeric_grad(lambda: float(x[0] ** 3 + np.sin(x[1])), x)
    np.testing.assert_allclose(num, [3.0, np.cos(2.0)], rtol=1e-8)
