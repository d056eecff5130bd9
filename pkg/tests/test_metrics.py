import numpy as np
import pytest

from guicoder import metrics
from guicoder.model import DecodeResult
from guicoder.nn import EmptyInput
from guicoder.render import decode_pgm

# (pred, gt, expected) worked out by hand
TOKEN_CASES = [
    ([], [], 0.0),
    ([1], [1], 0.0),
    ([1], [2], 1.0),
    ([], [1, 2], 1.0),
    ([1, 2], [], 1.0),
    ([1, 2, 3], [1, 2, 3], 0.0),
    ([1, 2, 3], [1, 2, 4], 1 / 3),
    ([1, 2], [1, 2, 3, 4], 0.5),
    ([1, 2, 3, 4], [1, 2], 0.5),
    ([9, 9, 3, 4], [1, 2, 3, 4], 0.5),
    ([2, 1], [1, 2], 1.0),
    ([1, 2, 3], [2, 3], 1.0),
    ([5] * 10, [5] * 9 + [6], 0.1),
    ([4, 2, 6, 3, 1], [4, 2, 6, 7, 3, 1], 3 / 6),
]


@pytest.mark.parametrize("pred,gt,expected", TOKEN_CASES)
def test_token_error(pred, gt, expected):
    assert metrics.token_error(pred, gt) == pytest.approx(expected, abs=1e-12)


def test_token_error_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = list(rng.integers(0, 4, rng.integers(0, 8)))
        b = list(rng.integers(0, 4, rng.integers(0, 8)))
        e = metrics.token_error(a, b)
        assert 0.0 <= e <= 1.0
        assert e == metrics.token_error(b, a)


@pytest.mark.parametrize("pairs,expected", [
    ([(3, 3), (2, 4), (5, 5), (1, 2)], 0.5),
    ([(1, 1)], 1.0),
    ([(0, 1)], 0.0),
    ([(2, 2), (2, 2), (2, 3)], 2 / 3),
])
def test_block_accuracy(pairs, expected):
    assert metrics.block_accuracy(pairs) == pytest.approx(expected)


def test_block_accuracy_empty():
    with pytest.raises(EmptyInput):
        metrics.block_accuracy([])


def test_exact_match():
    assert metrics.exact_match(0) == 1
    assert metrics.exact_match(1) == 0 and metrics.exact_match(-2) == 0


def test_attention_image_rules():
    onehot = np.zeros(6)
    onehot[4] = 1.0
    img = metrics.attention_image(onehot, (2, 3))
    assert img.tolist() == [[0, 0, 0], [0, 255, 0]]
    assert np.all(metrics.attention_image(np.full(6, 1 / 6), (2, 3)) == 128)
    ramp = metrics.attention_image(np.array([0.0, 0.5, 1.0, 0.25]), (2, 2))
    assert ramp.tolist() == [[0, 128], [255, 64]]


def test_dump_attention_writes_one_pgm_per_block(tmp_path):
    alphas = [np.full(4, 0.25), np.array([0.1, 0.2, 0.3, 0.4])]
    res = DecodeResult(blocks=[[1], [1]], alphas=alphas, stop_probs=[0.1, 0.2],
                       scores=[0.0, 0.0], truncated=[False, False], v_hats=[], nu=None, grid=(2, 2))
    paths = metrics.dump_attention(res, tmp_path / "attn")
    assert [p.rsplit("/", 1)[1] for p in map(str, paths)] == ["alpha_0.pgm", "alpha_1.pgm"]
    with open(paths[1], "rb") as f:
        img = decode_pgm(f.read())
    assert img.tolist() == [[0, 85], [170, 255]]


def test_report_format():
    rep = metrics.EvalReport(0.25, 0.5, [metrics.EvalRow(3, 4, 4, 1, 1, 1, 0.25)],
                             {"split": "test"})
    lines = rep.format().splitlines()
    assert lines[0] == "token_error=0.250000\tA_bp=0.500000"
    assert lines[1] == "# split=test"
    assert lines[2].split("\t")[0] == "id"
    assert lines[3] == "3\t4\t4\t1\t1\t1\t0.250000"


def test_evaluate_empty_split():
    with pytest.raises(EmptyInput):
        metrics.evaluate(None, [], None)
