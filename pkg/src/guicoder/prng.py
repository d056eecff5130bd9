"""SplitMix64 pseudo-random stream.

All randomness in the package (program generation, weight init, dropout,
shuffling) goes through this generator so results do not depend on numpy's
or Python's RNG implementations.
"""
import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def next_u64(state):
    """Advance ``state`` once and return ``(output, new_state)``."""
    state = (state + GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31), state


def below(state, n):
    """Draw an integer in ``[0, n)`` as ``next_u64 mod n``."""
    z, state = next_u64(state)
    return z % n, state


def u64_block(state, n):
    """Return the next ``n`` outputs as a uint64 array plus the advanced state.

    Equivalent to calling :func:`next_u64` ``n`` times.
    """
    steps = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(state) + steps * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    z ^= z >> np.uint64(31)
    return z, (state + n * GAMMA) & MASK64


def uniform_block(state, n):
    """``n`` doubles in ``[0, 1)`` built from the top 53 bits of each output."""
    z, state = u64_block(state, n)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53)), state


class SplitMix64:
    """Mutable convenience wrapper around the functional stream."""

    def __init__(self, seed=0):
        self.state = seed & MASK64

    def next_u64(self):
        z, self.state = next_u64(self.state)
        return z

    def below(self, n):
        z, self.state = below(self.state, n)
        return z

    def uniform(self, n):
        u, self.state = uniform_block(self.state, n)
        return u

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order
