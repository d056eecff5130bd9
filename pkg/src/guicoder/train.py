"""Mini-batch Adam training with deterministic shuffling, dropout and resume."""
import math
from dataclasses import dataclass

import numpy as np

from . import dsl, model, nn
from .prng import MASK64, SplitMix64, next_u64


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    steps: int = 0  # total optimizer steps; 0 means epochs * batches per epoch
    seed: int = 0


def epoch_order(seed, epoch, n):
    return SplitMix64(seed ^ ((epoch + 1) * 0xD1B54A32D192ED03 & MASK64)).permutation(n)


def dropout_state(seed, step):
    return next_u64((seed + (step + 1) * 0xA0761D6478BD642F) & MASK64)[0]


def total_steps(n_examples, tcfg):
    per_epoch = math.ceil(n_examples / tcfg.batch_size)
    return tcfg.steps if tcfg.steps > 0 else tcfg.epochs * per_epoch


def train(examples, mcfg, tcfg, params=None, log=None):
    """Train on ``examples`` (a list of ``(id, image, token ids)``).

    Optimizer step ``s`` always uses batch ``s mod batches_per_epoch`` of
    the shuffle for epoch ``s // batches_per_epoch`` and a dropout stream
    derived from ``(seed, s)``, so a run resumed from saved params (which
    carry the step counter) continues exactly where it stopped.

    ``log`` receives one line per batch (``step<TAB>loss``) and a comment line
    at the end of every epoch.
    """
    if not examples:
        raise nn.EmptyInput("training set is empty")
    if params is None:
        params = model.init_model(mcfg, tcfg.seed)
    images = np.stack([x for _, x, _ in examples]).astype(np.float32)
    blocks = [dsl.blockify(ids) for _, _, ids in examples]
    n = len(examples)
    per_epoch = math.ceil(n / tcfg.batch_size)
    end = total_steps(n, tcfg)
    epoch_losses = []
    clipped = 0
    order, order_epoch = None, None
    while params.t < end:
        step = params.t
        epoch, j = divmod(step, per_epoch)
        if order_epoch != epoch:
            order, order_epoch = epoch_order(tcfg.seed, epoch, n), epoch
        idx = order[j * tcfg.batch_size:(j + 1) * tcfg.batch_size]
        res = model.batch_loss_and_grads(images[idx], [blocks[i] for i in idx], params,
                                         mcfg.dropout, dropout_state(tcfg.seed, step))
        nn.check_finite("loss", res.loss)
        norm = nn.clip_global_norm(res.grads, tcfg.clip_norm)
        clipped += bool(tcfg.clip_norm and norm > tcfg.clip_norm)
        nn.adam_step(params, res.grads, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
        epoch_losses.append(res.loss)
        if log is not None:
            log(f"{params.t}\t{res.loss:.6f}")
            if j == per_epoch - 1:
                log(f"# epoch {epoch + 1} mean_loss={np.mean(epoch_losses):.6f} clipped={clipped}")
        if j == per_epoch - 1:
            epoch_losses, clipped = [], 0
    return params
