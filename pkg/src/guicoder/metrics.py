"""Token classification error, block partitioning accuracy and attention dumps."""
import os
from dataclasses import dataclass, field

import numpy as np

from . import dsl, model
from .nn import EmptyInput
from .render import encode_pgm


def token_error(pred, gt):
    """Positional mismatch rate; surplus or missing tokens count as errors.

    ``(sum_{i < min(m, n)} [pred_i != gt_i] + |m - n|) / max(m, n, 1)``
    """
    m, n = len(pred), len(gt)
    wrong = sum(a != b for a, b in zip(pred, gt))
    return (wrong + abs(m - n)) / max(m, n, 1)


def exact_match(x):
    """1 when the block count difference is zero, else 0."""
    return 1 if x == 0 else 0


def block_accuracy(pairs):
    """Fraction of ``(predicted, ground-truth)`` block counts that agree."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("block_accuracy needs at least one example")
    return sum(exact_match(p - g) for p, g in pairs) / len(pairs)


@dataclass
class EvalRow:
    id: int
    c_pred: int
    c_gt: int
    mismatches: int
    blocks_pred: int
    blocks_gt: int
    error: float


@dataclass
class EvalReport:
    token_error: float
    block_accuracy: float
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def format(self):
        lines = [f"token_error={self.token_error:.6f}\tA_bp={self.block_accuracy:.6f}"]
        if self.config:
            lines.append("# " + " ".join(f"{k}={v}" for k, v in self.config.items()))
        lines.append("id\tC_pred\tC_gt\tmismatches\tblocks_pred\tblocks_gt\ttoken_error")
        for r in self.rows:
            lines.append(f"{r.id}\t{r.c_pred}\t{r.c_gt}\t{r.mismatches}\t"
                         f"{r.blocks_pred}\t{r.blocks_gt}\t{r.error:.6f}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.format())


def evaluate(params, examples, cfg, beam=None, config=None):
    """Decode every ``(id, image, ids)`` example and score it."""
    if not examples:
        raise EmptyInput("no examples to evaluate")
    rows = []
    for ex_id, image, gt in examples:
        res = model.predict(image, params, cfg, beam)
        pred = res.tokens
        mism = sum(a != b for a, b in zip(pred, gt)) + abs(len(pred) - len(gt))
        rows.append(EvalRow(ex_id, len(pred), len(gt), mism, len(res.blocks),
                            len(dsl.blockify(gt)), token_error(pred, gt)))
    return EvalReport(
        float(np.mean([r.error for r in rows])),
        block_accuracy((r.blocks_pred, r.blocks_gt) for r in rows),
        rows,
        dict(config or {}),
    )


def attention_image(alpha, grid):
    """Min-max scale an attention map to bytes; constant maps become 128."""
    a = np.asarray(alpha, dtype=np.float64).reshape(grid)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.full(grid, 128, dtype=np.uint8)
    return np.rint((a - lo) / (hi - lo) * 255.0).astype(np.uint8)


def dump_attention(result, out_dir):
    """Write ``alpha_<t>.pgm`` for every decoded block; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for t, alpha in enumerate(result.alphas):
        path = os.path.join(out_dir, f"alpha_{t}.pgm")
        with open(path, "wb") as f:
            f.write(encode_pgm(attention_image(alpha, result.grid)))
        paths.append(path)
    return paths
