import dataclasses
import itertools
import math

import numpy as np
import pytest

from guicoder import dsl, gradcheck, model, nn, synth, train
from guicoder.render import render

TINY = model.ModelConfig(image_size=32, conv=(2, 3, 4), hidden=8, embed=8, attn=4,
                         max_blocks=4, max_tokens=6, dropout=0.0)


def example(text, size=32, dtype=np.float32):
    ast = dsl.parse(dsl.tokenize(text))
    return synth.image_tensor(render(ast, size, size), dtype), dsl.ast_tokens(ast)


def zeroed(params, *names):
    for n in names:
        params.tensors[n][...] = 0
    return params


def test_encode_shapes_full_widths():
    cfg = model.ModelConfig(image_size=128, conv=(32, 64, 128), coords=False)
    params = model.init_model(cfg, 0)
    nu, vp, _ = model.encode(np.zeros((3, 128, 128), np.float32), params)
    assert nu.shape == (256, 128) and vp.shape == (128,)


def test_encode_zero_image_zero_biases():
    cfg = dataclasses.replace(TINY, coords=False)
    params = zeroed(model.init_model(cfg, 0), "conv1.b", "conv2.b", "conv3.b")
    nu, vp, _ = model.encode(np.zeros((3, 32, 32), np.float32), params)
    assert np.all(nu == 0) and np.all(vp == 0)


def test_encode_pooled_dominates_regions():
    params = model.init_model(TINY, 1)
    x, _ = example("stack { row { btn img } row { text } }")
    nu, vp, _ = model.encode(x, params)
    assert np.all(vp[None, :] >= nu)


def test_block_step_zero_weights_is_undecided():
    params = model.init_model(TINY, 0)
    for name in params.names():
        if name.startswith("block."):
            params.tensors[name][...] = 0
    s = model.block_step(params, vp=np.zeros(4, np.float32))
    np.testing.assert_allclose(s["p"], [0.5, 0.5])


def test_block_step_starts_from_zero_state():
    params = model.init_model(TINY, 0)
    vp = np.random.default_rng(0).standard_normal(4).astype(np.float32)
    s = model.block_step(params, vp=vp)
    x = params["block.xv.w"] @ vp + params["block.xv.b"]
    h, c, _ = nn.lstm_cell(x, np.zeros(8, np.float32), np.zeros(8, np.float32),
                           params["block.lstm.w"], params["block.lstm.b"])
    np.testing.assert_allclose(s["h"], h, rtol=1e-6)
    s2 = model.block_step(params, vp=vp)
    for k in ("h", "c", "o", "p"):
        np.testing.assert_array_equal(s[k], s2[k])
    assert abs(float(s["p"].sum()) - 1.0) < 1e-6


def test_teacher_forcing_emits_one_row_per_token():
    params = model.init_model(TINY, 0)
    v_hat = np.ones((1, 4), np.float32)
    tokens = np.array([dsl.tokenize("row { label btn } BLOCK-END")])
    logits, _, _ = model.token_forward(v_hat, tokens, params)
    assert logits.shape == (1, 6, dsl.K)


def test_greedy_forced_block_end():
    params = model.init_model(TINY, 0)
    zeroed(params, "tok.out.w")
    params.tensors["tok.out.b"][dsl.BLOCK_END] = 10.0
    toks, _, trunc = model.greedy_tokens(np.ones(4, np.float32), params, 6)
    assert toks == [dsl.BLOCK_END] and not trunc


def test_greedy_truncation_flag():
    params = model.init_model(TINY, 0)
    zeroed(params, "tok.out.w")
    params.tensors["tok.out.b"][dsl.tokenize("label")[0]] = 10.0
    toks, _, trunc = model.greedy_tokens(np.ones(4, np.float32), params, 5)
    assert len(toks) == 5 and trunc


def test_uniform_predictions_loss():
    params = model.init_model(TINY, 0)
    zeroed(params, "block.stop.w", "block.stop.b", "tok.out.w", "tok.out.b")
    x, ids = example("stack { row { label btn } row { slider } }")
    blocks = dsl.blockify(ids)
    loss, _ = model.forward_train(x, ids, params)
    expected = len(blocks) * math.log(2) + sum(map(len, blocks)) * math.log(dsl.K)
    assert abs(loss - expected) < 1e-4


def test_loss_deterministic_given_dropout_stream():
    cfg = dataclasses.replace(TINY, dropout=0.5)
    params = model.init_model(cfg, 0)
    x, ids = example("stack { row { label btn } row { slider } }")
    a = model.forward_train(x, ids, params, cfg.dropout, 99)
    b = model.forward_train(x, ids, params, cfg.dropout, 99)
    c = model.forward_train(x, ids, params, cfg.dropout, 100)
    assert a[0] == b[0] and a[0] != c[0]
    assert a[0] >= 0 and math.isfinite(a[0])


def test_teacher_forced_counts():
    params = model.init_model(TINY, 0)
    texts = ["stack { row { label btn } row { slider } }", "stack { row { img } }"]
    exs = [example(t) for t in texts]
    blocks = [dsl.blockify(ids) for _, ids in exs]
    res = model.batch_loss_and_grads(np.stack([x for x, _ in exs]), blocks, params, training=False)
    assert res.n_tokens == sum(len(b) for bl in blocks for b in bl)
    assert set(res.grads) == set(params.names())
    for k, g in res.grads.items():
        assert g.shape == params[k].shape and g.dtype == np.float32


def test_end_to_end_gradient():
    res = gradcheck.check_model(seed=2)
    assert res.rel_error < 1e-3, res


def test_batched_gradient_with_mixed_block_counts():
    _, _, _, params = gradcheck.micro_setup(4)
    texts = ["stack { row { label btn } row { slider } }", "stack { row { img } }",
             "stack { row { text } row { check btn } }"]
    exs = [example(t, dtype=np.float64) for t in texts]
    X = np.stack([x for x, _ in exs])
    blocks = [dsl.blockify(ids) for _, ids in exs]

    def f():
        return model.batch_loss_and_grads(X, blocks, params, 0.5, 5).loss

    res = model.batch_loss_and_grads(X, blocks, params, 0.5, 5)
    rng = np.random.default_rng(0)
    ana, num = [], []
    for name, arr in params.tensors.items():
        idx = rng.choice(arr.size, min(6, arr.size), replace=False)
        ana.append(res.grads[name].reshape(-1)[idx])
        num.append(gradcheck.numeric_grad(f, arr, idx))
    assert gradcheck.rel_error(np.concatenate(ana), np.concatenate(num)) < 1e-3


def _tiny_set(n, seed=0, size=32):
    gen = synth.GenConfig(min_rows=1, max_rows=2, min_leaves=1, max_leaves=2,
                          image_size=size, seed=seed)
    out = []
    for i in range(n):
        ast = synth.example_program(gen, i)
        out.append((i, synth.image_tensor(render(ast, size, size)), dsl.ast_tokens(ast)))
    return out


def test_train_step_count():
    params = train.train(_tiny_set(2), TINY, train.TrainConfig(epochs=1, batch_size=2))
    assert params.t == 1
    params = train.train(_tiny_set(5), TINY, train.TrainConfig(epochs=2, batch_size=2))
    assert params.t == 6


def test_train_deterministic_and_resumable():
    data = _tiny_set(5)
    cfg = dataclasses.replace(TINY, dropout=0.5)
    full = train.train(data, cfg, train.TrainConfig(steps=7, batch_size=2, seed=3))
    again = train.train(data, cfg, train.TrainConfig(steps=7, batch_size=2, seed=3))
    assert nn.dump_weights(full) == nn.dump_weights(again)
    part = train.train(data, cfg, train.TrainConfig(steps=4, batch_size=2, seed=3))
    part, _ = nn.load_weights(nn.dump_weights(part))
    resumed = train.train(data, cfg, train.TrainConfig(steps=7, batch_size=2, seed=3), params=part)
    assert nn.dump_weights(resumed) == nn.dump_weights(full)


def test_training_reduces_loss():
    data = _tiny_set(8)
    cfg = dataclasses.replace(TINY, dropout=0.0)
    losses = []
    train.train(data, cfg, train.TrainConfig(steps=50, batch_size=8),
                log=lambda line: line.startswith("#") or losses.append(float(line.split("\t")[1])))
    assert len(losses) == 50 and losses[-1] < losses[0]


def test_train_rejects_empty():
    with pytest.raises(nn.EmptyInput):
        train.train([], TINY, train.TrainConfig())


@pytest.fixture(scope="module")
def tiny_params():
    return model.init_model(TINY, 7)


def test_predict_caps_blocks(tiny_params):
    x, _ = example("stack { row { label btn } row { slider } }")
    cfg = dataclasses.replace(TINY, max_blocks=1)
    res = model.predict_greedy(x, tiny_params, cfg)
    assert len(res.blocks) == 1
    assert res.tokens[:2] == [dsl.STACK, dsl.OPEN] and res.tokens[-1] == dsl.CLOSE
    dsl.parse(dsl.ast_tokens(res.program()))


def test_decode_result_invariants(tiny_params):
    x, _ = example("stack { row { label btn } row { slider } }")
    res = model.predict_greedy(x, tiny_params, TINY)
    assert len(res.alphas) == len(res.blocks) == len(res.stop_probs) == len(res.truncated)
    for alpha, v_hat, blk, trunc in zip(res.alphas, res.v_hats, res.blocks, res.truncated):
        assert abs(float(alpha.sum()) - 1.0) < 1e-6
        assert np.all(v_hat >= res.nu.min(axis=0) - 1e-6) and np.all(v_hat <= res.nu.max(axis=0) + 1e-6)
        assert trunc or blk[-1] == dsl.BLOCK_END


def test_beam_one_equals_greedy():
    params = model.init_model(TINY, 11)
    for i, x, _ in _tiny_set(10, seed=4):
        g = model.predict_greedy(x, params, TINY)
        b = model.predict_beam(x, params, TINY, 1)
        assert g.blocks == b.blocks and g.scores == b.scores


def test_beam_never_scores_below_greedy():
    params = model.init_model(TINY, 12)
    for _, x, _ in _tiny_set(6, seed=5):
        g = model.predict_greedy(x, params, TINY)
        b = model.predict_beam(x, params, TINY, 3)
        assert len(g.blocks) == len(b.blocks)
        for gs, bs in zip(g.scores, b.scores):
            assert bs >= gs - 1e-9


def brute_force_best(v_hat, params, max_tokens):
    """Score every token sequence of length <= max_tokens by direct LSTM runs."""
    k = params["tok.out.w"].shape[0]
    best = None
    for n in range(1, max_tokens + 1):
        for seq in itertools.product(range(k), repeat=n):
            if dsl.BLOCK_END in seq[:-1]:
                continue
            if n < max_tokens and seq[-1] != dsl.BLOCK_END:
                continue
            logits, _, _ = model.token_forward(v_hat[None], np.array([seq]), params)
            logp = nn.log_softmax(logits[0].astype(np.float64))
            score = float(sum(logp[j, t] for j, t in enumerate(seq)))
            cand = (score, list(seq))
            if best is None or model._better(cand, best):
                best = cand
    return best


def test_wide_beam_matches_exhaustive_search():
    cfg = dataclasses.replace(TINY, max_tokens=3)
    params = model.init_model(cfg, 21, np.float64)
    # flatten the output layer so many hypotheses compete
    params.tensors["tok.out.w"] *= 3.0
    rng = np.random.default_rng(0)
    for _ in range(3):
        v_hat = rng.standard_normal(4)
        seq, score, _ = model.beam_tokens(v_hat, params, cfg.max_tokens, dsl.K ** cfg.max_tokens)
        ref_score, ref_seq = brute_force_best(v_hat, params, cfg.max_tokens)
        assert seq == ref_seq
        assert abs(score - ref_score) < 1e-9


def test_repair_keeps_valid_programs():
    body = dsl.tokenize("row { label btn } row { stack { img } }")
    assert dsl.serialize(model.repair(body)) == "stack { row { label btn } row { stack { img } } }"


@pytest.mark.parametrize("text,expected", [
    ("row { label", "stack { row { label } }"),
    ("row { } row { btn } }", "stack { row { btn } }"),
    ("label row { btn BLOCK-END PAD }", "stack { row { btn } }"),
    ("{ row { img } } row label", "stack { row { img } }"),
    ("", "stack { }"),
])
def test_repair_fixes_broken_output(text, expected):
    out = model.repair(dsl.tokenize(text))
    assert dsl.serialize(out) == expected
    dsl.parse(dsl.ast_tokens(out))


def test_config_from_params_round_trip():
    params = model.init_model(TINY, 0)
    cfg = model.config_from_params(params, image_size=32, max_blocks=4, max_tokens=6, dropout=0.0)
    assert cfg == TINY
