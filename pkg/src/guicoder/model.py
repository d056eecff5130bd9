"""Hierarchical image-to-DSL model.

Pipeline: CNN encoder -> region features ``nu`` (L x D) and their channel max
``v_p`` -> block LSTM that emits one guiding state per block and a
CONTINUE/STOP distribution -> soft attention over ``nu`` per block -> a
two-layer token LSTM that writes the block's tokens.

Training works on a whole mini-batch at once: the block LSTM runs over the
batch, then every block of every example is flattened into one batch for
attention and the token LSTM.
"""
from dataclasses import dataclass, field

import numpy as np

from . import dsl, nn

CONTINUE, STOP = 0, 1


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    conv: tuple = (8, 16, 32)
    hidden: int = 64
    embed: int = 64
    attn: int = 32
    vocab_size: int = dsl.K
    max_blocks: int = 10
    max_tokens: int = 16
    dropout: float = 0.5
    coords: bool = True

    @property
    def feature_dim(self):
        return self.conv[-1]

    @property
    def grid(self):
        return self.image_size // 8

    def __post_init__(self):
        vals = (self.image_size, self.hidden, self.embed, self.attn, self.vocab_size,
                self.max_blocks, self.max_tokens, *self.conv)
        if min(vals) <= 0:
            raise ValueError("model sizes must be positive")
        if len(self.conv) != 3:
            raise ValueError("encoder has exactly three conv layers")
        if self.image_size % 8:
            raise ValueError("image_size must be divisible by 8")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


PRESETS = {
    "paper": ModelConfig(image_size=256, conv=(32, 64, 128), hidden=512, embed=512, attn=256),
    "desk": ModelConfig(image_size=64, conv=(8, 16, 32), hidden=64, embed=64, attn=32),
}


def param_spec(cfg):
    """``(name, shape, init kind)`` for every parameter, in init order."""
    c1, c2, d = cfg.conv
    h, e, a, k = cfg.hidden, cfg.embed, cfg.attn, cfg.vocab_size
    return [
        ("conv1.w", (c1, 5 if cfg.coords else 3, 3, 3), "relu_weight"), ("conv1.b", (c1,), "bias"),
        ("conv2.w", (c2, c1, 3, 3), "relu_weight"), ("conv2.b", (c2,), "bias"),
        ("conv3.w", (d, c2, 3, 3), "relu_weight"), ("conv3.b", (d,), "bias"),
        ("block.xv.w", (e, d), "weight"), ("block.xv.b", (e,), "bias"),
        ("block.xo.w", (e, h), "weight"), ("block.xo.b", (e,), "bias"),
        ("block.lstm.w", (4 * h, e + h), "weight"), ("block.lstm.b", (4 * h,), "lstm_bias"),
        ("block.oh.w", (h, h), "weight"), ("block.oh.b", (h,), "bias"),
        ("block.stop.w", (2, h), "weight"), ("block.stop.b", (2,), "bias"),
        ("att.ev.w", (a, d), "weight"), ("att.eh.w", (a, h), "weight"),
        ("att.e.b", (a,), "bias"), ("att.s.w", (1, a), "weight"),
        ("tok.inv.w", (e, d), "weight"), ("tok.inv.b", (e,), "bias"),
        ("tok.inq.w", (e, k), "weight"), ("tok.inq.b", (e,), "bias"),
        ("tok.lstm1.w", (4 * h, e + h), "weight"), ("tok.lstm1.b", (4 * h,), "lstm_bias"),
        ("tok.lstm2.w", (4 * h, 2 * h), "weight"), ("tok.lstm2.b", (4 * h,), "lstm_bias"),
        ("tok.out.w", (k, h), "weight"), ("tok.out.b", (k,), "bias"),
    ]


def init_model(cfg, seed, dtype=np.float32):
    """Fresh parameters; conv1's bias starts at ``-0.5 * sum(w)`` over the RGB
    taps, so the first layer sees images as if centered on mid-gray while
    the input contract stays ``x / 255``."""
    params = nn.init_params(param_spec(cfg), seed, dtype)
    w1 = params.tensors["conv1.w"]
    params.tensors["conv1.b"][...] = -0.5 * w1[:, :3].sum(axis=(1, 2, 3))
    return params


def config_from_params(params, **overrides):
    """Recover the architecture sizes from parameter shapes."""
    t = params.tensors
    conv = tuple(t[f"conv{i}.w"].shape[0] for i in (1, 2, 3))
    base = dict(conv=conv, coords=t["conv1.w"].shape[1] == 5, hidden=t["block.oh.w"].shape[0], embed=t["block.xv.w"].shape[0],
                attn=t["att.ev.w"].shape[0], vocab_size=t["tok.out.w"].shape[0])
    base.update(overrides)
    return ModelConfig(**base)


# -- encoder ---------------------------------------------------------------

def coord_channels(n, size, dtype):
    """Two planes holding each pixel's row and column position in [0, 1]."""
    ramp = np.linspace(0.0, 1.0, size, dtype=dtype)
    planes = np.stack([np.repeat(ramp[:, None], size, 1), np.repeat(ramp[None, :], size, 0)])
    return np.broadcast_to(planes, (n, 2, size, size))


def encode(images, params):
    """Images (B,3,S,S) -> ``(nu (B,L,D), v_p (B,D), cache)``; 3-d input is unbatched.

    When ``conv1`` takes five input channels, row/column coordinate planes
    are appended to the RGB input.
    """
    single = images.ndim == 3
    x = images[None] if single else images
    if params["conv1.w"].shape[1] == 5:
        x = np.concatenate([x, coord_channels(x.shape[0], x.shape[2], x.dtype)], axis=1)
    caches = []
    for i in (1, 2, 3):
        a, cc = nn.conv2d(x, params[f"conv{i}.w"], params[f"conv{i}.b"])
        r = nn.relu(a)
        x, pc = nn.maxpool2d(r)
        caches.append((cc, a, pc))
    b, d, gh, gw = x.shape
    nu = np.ascontiguousarray(x.reshape(b, d, gh * gw).transpose(0, 2, 1))
    vp, rc = nn.region_pool(nu)
    cache = (caches, (b, d, gh, gw), rc)
    if single:
        return nu[0], vp[0], cache
    return nu, vp, cache


def encode_backward(dnu, dvp, cache, grads):
    caches, shape, rc = cache
    dnu = dnu + nn.region_pool_backward(dvp, rc)
    b, d, gh, gw = shape
    dx = np.ascontiguousarray(dnu.transpose(0, 2, 1)).reshape(shape)
    for i in (3, 2, 1):
        cc, a, pc = caches[i - 1]
        dr = nn.maxpool2d_backward(dx, pc)
        da = nn.relu_backward(dr, a)
        if i == 1:
            # input gradient is never needed for the image
            _, dw, db = _conv_param_grads(da, cc)
        else:
            dx, dw, db = nn.conv2d_backward(da, cc)
        _acc(grads, f"conv{i}.w", dw)
        _acc(grads, f"conv{i}.b", db)


def _conv_param_grads(dy, cache):
    _, cols, w, _, _, _ = cache
    n, co = dy.shape[:2]
    dyf = dy.reshape(n, co, -1)
    return None, np.einsum("nol,nkl->ok", dyf, cols).reshape(w.shape), dyf.sum(axis=(0, 2))


def _acc(grads, name, g):
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g.copy()


# -- block LSTM --------------------------------------------------------------

def block_step(params, vp=None, state=None):
    """One block LSTM step.

    First call passes ``vp``; later calls pass the previous state dict.
    Returns a state dict with ``h``, ``c``, ``o``, ``p`` (stop distribution)
    and ``logits``.
    """
    hid = params["block.oh.w"].shape[0]
    if state is None:
        x, _ = nn.linear(vp, params["block.xv.w"], params["block.xv.b"])
        zeros = np.zeros(x.shape[:-1] + (hid,), dtype=x.dtype)
        h_prev, c_prev = zeros, zeros
    else:
        x, _ = nn.linear(state["o"], params["block.xo.w"], params["block.xo.b"])
        h_prev, c_prev = state["h"], state["c"]
    h, c, cell = nn.lstm_cell(x, h_prev, c_prev, params["block.lstm.w"], params["block.lstm.b"])
    o = nn.sigmoid(nn.linear(h, params["block.oh.w"], params["block.oh.b"])[0])
    logits, _ = nn.linear(h, params["block.stop.w"], params["block.stop.b"])
    return {"h": h, "c": c, "o": o, "p": nn.softmax(logits), "logits": logits,
            "inp": vp if state is None else state["o"], "cell": cell}


def attend(nu, h, params):
    return nn.attention(nu, h, params["att.ev.w"], params["att.eh.w"],
                        params["att.e.b"], params["att.s.w"])


# -- token LSTM --------------------------------------------------------------

def _token_inputs(v_hat, prev_tokens, params):
    """Input vectors for every step: step 0 from ``v_hat``, later steps from
    the one-hot previous token. ``prev_tokens`` is (NB, T-1)."""
    x0, _ = nn.linear(v_hat, params["tok.inv.w"], params["tok.inv.b"])
    k = params["tok.out.w"].shape[0]
    oh = np.eye(k, dtype=v_hat.dtype)[prev_tokens]
    xq, _ = nn.linear(oh, params["tok.inq.w"], params["tok.inq.b"])
    return np.concatenate([x0[:, None, :], xq], axis=1), oh


def token_forward(v_hat, tokens, params, dropout=0.0, state=0, training=False):
    """Teacher-forced token LSTM over a batch of blocks.

    ``tokens`` (NB, T) holds each block's target tokens (padding anywhere
    past the block length is ignored by callers through a mask). Returns
    logits (NB, T, K), a cache and the advanced dropout state.
    """
    nb, steps = tokens.shape
    hid = params["tok.out.w"].shape[1]
    xs, oh = _token_inputs(v_hat, tokens[:, :-1], params)
    dtype = v_hat.dtype
    h1 = c1 = h2 = c2 = np.zeros((nb, hid), dtype=dtype)
    cells1, cells2 = [], []
    h2s = np.empty((nb, steps, hid), dtype=dtype)
    for j in range(steps):
        h1, c1, k1 = nn.lstm_cell(xs[:, j], h1, c1, params["tok.lstm1.w"], params["tok.lstm1.b"])
        h2, c2, k2 = nn.lstm_cell(h1, h2, c2, params["tok.lstm2.w"], params["tok.lstm2.b"])
        cells1.append(k1)
        cells2.append(k2)
        h2s[:, j] = h2
    dropped, mask, state = nn.dropout(h2s, dropout, state, training)
    logits, _ = nn.linear(dropped, params["tok.out.w"], params["tok.out.b"])
    return logits, (v_hat, oh, cells1, cells2, dropped, mask), state


def token_backward(dlogits, cache, params, grads):
    """Backprop through the token LSTM; returns the gradient wrt ``v_hat``."""
    v_hat, oh, cells1, cells2, dropped, mask = cache
    dd, dw, db = nn.linear_backward(dlogits, dropped, params["tok.out.w"])
    _acc(grads, "tok.out.w", dw)
    _acc(grads, "tok.out.b", db)
    dh2s = dd * mask if mask is not None else dd
    nb, steps, hid = dh2s.shape
    zeros = np.zeros((nb, hid), dtype=dh2s.dtype)
    dh1n = dc1n = dh2n = dc2n = zeros
    dxs = np.empty((nb, steps, params["tok.inv.w"].shape[0]), dtype=dh2s.dtype)
    w1 = np.zeros_like(params["tok.lstm1.w"])
    b1 = np.zeros_like(params["tok.lstm1.b"])
    w2 = np.zeros_like(params["tok.lstm2.w"])
    b2 = np.zeros_like(params["tok.lstm2.b"])
    for j in range(steps - 1, -1, -1):
        dx2, dh2n, dc2n, dw2, db2 = nn.lstm_cell_backward(dh2s[:, j] + dh2n, dc2n, cells2[j])
        w2 += dw2
        b2 += db2
        dx1, dh1n, dc1n, dw1, db1 = nn.lstm_cell_backward(dx2 + dh1n, dc1n, cells1[j])
        w1 += dw1
        b1 += db1
        dxs[:, j] = dx1
    _acc(grads, "tok.lstm1.w", w1)
    _acc(grads, "tok.lstm1.b", b1)
    _acc(grads, "tok.lstm2.w", w2)
    _acc(grads, "tok.lstm2.b", b2)
    dvh, dw, db = nn.linear_backward(dxs[:, 0], v_hat, params["tok.inv.w"])
    _acc(grads, "tok.inv.w", dw)
    _acc(grads, "tok.inv.b", db)
    _, dw, db = nn.linear_backward(dxs[:, 1:], oh, params["tok.inq.w"])
    _acc(grads, "tok.inq.w", dw)
    _acc(grads, "tok.inq.b", db)
    return dvh


# -- training objective ------------------------------------------------------

@dataclass
class BatchResult:
    loss: float
    grads: dict
    example_losses: np.ndarray
    block_losses: np.ndarray
    token_losses: np.ndarray
    n_tokens: int
    state: int = 0


def batch_loss_and_grads(images, block_lists, params, dropout=0.0, state=0, training=True):
    """Mean per-example loss over a batch and its gradient.

    ``block_lists[b]`` is the blockified ground truth of example ``b``. The
    per-example loss is the block stop cross-entropy summed over its S
    steps (CONTINUE for all but the last, STOP on the last) plus the token
    cross-entropy summed over every token of every block.
    """
    bsz = len(block_lists)
    if images.shape[0] != bsz:
        raise nn.ShapeMismatch("images and targets differ in batch size")
    dtype = images.dtype
    counts = np.array([len(bl) for bl in block_lists])
    if counts.min() < 1:
        raise dsl.NotAProgram("training programs need at least one block")
    t_max = int(counts.max())
    grads = {}

    nu, vp, enc_cache = encode(images, params)

    # block LSTM over the batch
    steps = []
    state_b = None
    for t in range(t_max):
        state_b = block_step(params, vp=vp if t == 0 else None, state=state_b)
        steps.append(state_b)
    stop_logits = np.stack([s["logits"] for s in steps], axis=1)  # (B, T, 2)
    tgrid = np.arange(t_max)[None, :]
    bmask = tgrid < counts[:, None]
    btarget = (tgrid == counts[:, None] - 1).astype(np.intp)
    block_ce, dstop = nn.cross_entropy_masked(stop_logits, btarget, bmask)

    # flatten blocks for attention + token LSTM
    ex_idx = np.repeat(np.arange(bsz), counts)
    step_idx = np.concatenate([np.arange(c) for c in counts])
    hs = np.stack([s["h"] for s in steps], axis=1)  # (B, T, H)
    hq = hs[ex_idx, step_idx]
    nuq = nu[ex_idx]
    alpha, v_hat, att_cache = attend(nuq, hq, params)

    flat_blocks = [blk for bl in block_lists for blk in bl]
    lens = np.array([len(blk) for blk in flat_blocks])
    n_max = int(lens.max())
    tokens = np.zeros((len(flat_blocks), n_max), dtype=np.intp)
    for i, blk in enumerate(flat_blocks):
        tokens[i, :len(blk)] = blk
    tmask = np.arange(n_max)[None, :] < lens[:, None]
    logits, tok_cache, state = token_forward(v_hat, tokens, params, dropout, state, training)
    tok_ce, dlogits = nn.cross_entropy_masked(logits, tokens, tmask)

    block_losses = block_ce.sum(axis=1, dtype=np.float64)
    token_losses = np.bincount(ex_idx, weights=tok_ce.sum(axis=1, dtype=np.float64), minlength=bsz)
    example_losses = block_losses + token_losses
    loss = float(example_losses.mean())

    scale = dtype.type(1.0 / bsz)
    dlogits *= scale
    dstop *= scale

    dv_hat = token_backward(dlogits, tok_cache, params, grads)
    dnuq, dhq, dw_ev, dw_eh, db_e, dw_s = nn.attention_backward(dv_hat, att_cache)
    _acc(grads, "att.ev.w", dw_ev)
    _acc(grads, "att.eh.w", dw_eh)
    _acc(grads, "att.e.b", db_e)
    _acc(grads, "att.s.w", dw_s)
    dnu = np.zeros_like(nu)
    np.add.at(dnu, ex_idx, dnuq)

    dhs = np.zeros_like(hs)
    np.add.at(dhs, (ex_idx, step_idx), dhq)
    dvp = _block_backward(steps, dstop, dhs, params, grads)
    encode_backward(dnu, dvp, enc_cache, grads)
    return BatchResult(loss, grads, example_losses, block_losses, token_losses,
                       int(lens.sum()), state)


def _block_backward(steps, dstop, dhs, params, grads):
    t_max = len(steps)
    w_xo = params["block.xo.w"]
    dh_next = np.zeros_like(steps[0]["h"])
    dc_next = np.zeros_like(steps[0]["c"])
    dx_next = None
    acc = {k: np.zeros_like(params[k]) for k in
           ("block.xo.w", "block.xo.b", "block.lstm.w", "block.lstm.b",
            "block.oh.w", "block.oh.b", "block.stop.w", "block.stop.b")}
    for t in range(t_max - 1, -1, -1):
        s = steps[t]
        dh, dw, db = nn.linear_backward(dstop[:, t], s["h"], params["block.stop.w"])
        acc["block.stop.w"] += dw
        acc["block.stop.b"] += db
        dh = dh + dhs[:, t] + dh_next
        if dx_next is not None:
            do, dw, db = nn.linear_backward(dx_next, steps[t]["o"], w_xo)
            acc["block.xo.w"] += dw
            acc["block.xo.b"] += db
            da = nn.sigmoid_backward(do, s["o"])
            dh_o, dw, db = nn.linear_backward(da, s["h"], params["block.oh.w"])
            acc["block.oh.w"] += dw
            acc["block.oh.b"] += db
            dh = dh + dh_o
        dx, dh_next, dc_next, dw, db = nn.lstm_cell_backward(dh, dc_next, s["cell"])
        acc["block.lstm.w"] += dw
        acc["block.lstm.b"] += db
        dx_next = dx
    for k, g in acc.items():
        _acc(grads, k, g)
    dvp, dw, db = nn.linear_backward(dx_next, steps[0]["inp"], params["block.xv.w"])
    _acc(grads, "block.xv.w", dw)
    _acc(grads, "block.xv.b", db)
    return dvp


def forward_train(image, ids, params, dropout=0.0, state=0, training=True):
    """Loss and gradient for one (image, program) pair; returns ``(loss, grads)``."""
    blocks = dsl.blockify(ids)
    res = batch_loss_and_grads(image[None], [blocks], params, dropout, state, training)
    return res.loss, res.grads


# -- inference ---------------------------------------------------------------

@dataclass
class DecodeResult:
    blocks: list
    alphas: list
    stop_probs: list
    scores: list
    truncated: list
    v_hats: list = field(default_factory=list)
    nu: np.ndarray = None
    grid: tuple = (0, 0)

    @property
    def tokens(self):
        """Raw program tokens: the decoded blocks concatenated inside ``stack { }``."""
        out = [dsl.STACK, dsl.OPEN]
        for blk in self.blocks:
            out.extend(t for t in blk if t != dsl.BLOCK_END)
        out.append(dsl.CLOSE)
        return out

    def program(self):
        """A parseable program built from the decoded tokens (see :func:`repair`)."""
        return repair(self.tokens[2:-1])


class _TokenLSTM:
    """Incremental token LSTM over a set of hypotheses."""

    def __init__(self, params):
        self.p = params

    def start(self, v_hat, n=1):
        x, _ = nn.linear(v_hat, self.p["tok.inv.w"], self.p["tok.inv.b"])
        x = np.repeat(x[None], n, axis=0)
        hid = self.p["tok.out.w"].shape[1]
        z = np.zeros((n, hid), dtype=x.dtype)
        return x, (z, z, z, z)

    def embed(self, tokens):
        w = self.p["tok.inq.w"]
        return w.T[tokens] + self.p["tok.inq.b"]

    def step(self, x, state):
        h1, c1, h2, c2 = state
        h1, c1, _ = nn.lstm_cell(x, h1, c1, self.p["tok.lstm1.w"], self.p["tok.lstm1.b"])
        h2, c2, _ = nn.lstm_cell(h1, h2, c2, self.p["tok.lstm2.w"], self.p["tok.lstm2.b"])
        logits, _ = nn.linear(h2, self.p["tok.out.w"], self.p["tok.out.b"])
        return nn.log_softmax(logits), (h1, c1, h2, c2)

    @staticmethod
    def select(state, idx):
        return tuple(s[idx] for s in state)


def greedy_tokens(v_hat, params, max_tokens):
    """Argmax decoding of one block; returns ``(tokens, log-prob, truncated)``."""
    lstm = _TokenLSTM(params)
    x, state = lstm.start(v_hat)
    out, score = [], 0.0
    for _ in range(max_tokens):
        logp, state = lstm.step(x, state)
        tok = int(np.argmax(logp[0]))
        score += float(logp[0, tok])
        out.append(tok)
        if tok == dsl.BLOCK_END:
            return out, score, False
        x = lstm.embed(np.array([tok]))
    return out, score, True


def _better(a, b):
    """Ordering for finished hypotheses ``(score, tokens)``: higher score,
    then lexicographically lower token ids, then shorter."""
    if a[0] != b[0]:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] < b[1]
    return len(a[1]) < len(b[1])


def beam_tokens(v_hat, params, max_tokens, beam):
    """Beam search over one block's tokens by summed log-probability.

    Each step keeps the ``beam`` best extensions; ties go to the lower token
    id. Hypotheses end at BLOCK-END or at ``max_tokens`` (truncated). The
    greedy hypothesis also competes in the final pool, so the result never
    scores below greedy decoding.
    """
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    lstm = _TokenLSTM(params)
    x, state = lstm.start(v_hat)
    seqs = [[]]
    scores = np.zeros(1)
    finished = []
    for step in range(max_tokens):
        logp, state = lstm.step(x, state)
        k = logp.shape[1]
        cand = (scores[:, None] + logp.astype(np.float64)).ravel()
        parent = np.repeat(np.arange(len(seqs)), k)
        token = np.tile(np.arange(k), len(seqs))
        order = np.lexsort((parent, token, -cand))[:beam]
        keep = []
        for i in order:
            seq = seqs[parent[i]] + [int(token[i])]
            if token[i] == dsl.BLOCK_END:
                finished.append((float(cand[i]), seq, False))
            elif step == max_tokens - 1:
                finished.append((float(cand[i]), seq, True))
            else:
                keep.append(i)
        if not keep:
            break
        best_done = max((f[0] for f in finished), default=-np.inf)
        if best_done > cand[keep].max():
            break
        keep = np.array(keep)
        seqs = [seqs[parent[i]] + [int(token[i])] for i in keep]
        scores = cand[keep]
        state = lstm.select(state, parent[keep])
        x = lstm.embed(token[keep])
    g_seq, g_score, g_trunc = greedy_tokens(v_hat, params, max_tokens)
    finished.append((g_score, g_seq, g_trunc))
    best = finished[0]
    for f in finished[1:]:
        if _better(f, best):
            best = f
    return best[1], best[0], best[2]


def _decode(image, params, cfg, token_fn):
    nu, vp, _ = encode(image, params)
    side = int(round(np.sqrt(nu.shape[0])))
    res = DecodeResult([], [], [], [], [], [], nu, (side, nu.shape[0] // side))
    state = None
    for t in range(cfg.max_blocks):
        state = block_step(params, vp=vp if t == 0 else None, state=state)
        alpha, v_hat, _ = attend(nu, state["h"], params)
        toks, score, trunc = token_fn(v_hat)
        res.blocks.append(toks)
        res.alphas.append(alpha)
        res.v_hats.append(v_hat)
        res.stop_probs.append(state["p"])
        res.scores.append(score)
        res.truncated.append(trunc)
        if int(np.argmax(state["p"])) == STOP:
            break
    return res


def predict_greedy(image, params, cfg):
    """Greedy decoding. Block ``t`` is decoded, then the block LSTM's stop
    distribution at step ``t`` decides whether it was the last one."""
    return _decode(image, params, cfg, lambda v: greedy_tokens(v, params, cfg.max_tokens))


def predict_beam(image, params, cfg, beam):
    return _decode(image, params, cfg, lambda v: beam_tokens(v, params, cfg.max_tokens, beam))


def predict(image, params, cfg, beam=None):
    if beam is None:
        return predict_greedy(image, params, cfg)
    return predict_beam(image, params, cfg, beam)


def repair(body):
    """Best-effort parseable program from an arbitrary program body.

    Containers whose tag is not followed by ``{`` are dropped, as are stray
    braces, special tokens, leaves directly under the root and containers
    left empty. Well-formed input comes back unchanged.
    """
    pos = 0

    def children(top):
        nonlocal pos
        out = []
        while pos < len(body):
            tok = body[pos]
            word = dsl.TOKENS[tok]
            if tok == dsl.CLOSE:
                pos += 1
                if top:
                    continue
                return out
            pos += 1
            if word in dsl.CONTAINER_TAGS:
                if pos < len(body) and body[pos] == dsl.OPEN:
                    pos += 1
                    kids = children(False)
                    if kids:
                        out.append(dsl.Container(word, tuple(kids)))
            elif word in dsl.LEAF_TAGS and not top:
                out.append(dsl.Leaf(word))
        return out

    return dsl.Container("stack", tuple(children(True)))
