import numpy as np

from guicoder.prng import SplitMix64, below, next_u64, u64_block, uniform_block


def test_first_output_from_zero_state():
    assert next_u64(0)[0] == 0xE220A8397B1DCDAF


def test_pure():
    assert next_u64(12345) == next_u64(12345)


def test_thousand_outputs_distinct():
    state, seen = 0, set()
    for _ in range(1000):
        z, state = next_u64(state)
        seen.add(z)
    assert len(seen) == 1000


def test_vectorized_block_matches_scalar():
    zs, end = u64_block(987654321, 50)
    state = 987654321
    for z in zs:
        ref, state = next_u64(state)
        assert int(z) == ref
    assert end == state


def test_uniform_range():
    u, _ = uniform_block(7, 10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.02


def test_below_is_modulo():
    z, s = next_u64(99)
    assert below(99, 7) == (z % 7, s)


def test_permutation_is_deterministic_shuffle():
    a = SplitMix64(5).permutation(20)
    assert a == SplitMix64(5).permutation(20)
    assert sorted(a) == list(range(20))
    assert a != list(range(20))
