"""Counter-based random streams.

Every random draw is addressed by ``(seed, N, replica, stream, step)``: the
first four fix a Philox key through :class:`numpy.random.SeedSequence` and
the step index is written into the high counter word.  Draws are therefore
independent of scheduling order, thread count and how many other replicas
ran before.
"""

import numpy as np

STREAM_INIT = 0
STREAM_NOISE = 1

_MASK64 = (1 << 64) - 1


def stream_key(seed, N, replica, stream):
    ss = np.random.SeedSequence([int(seed) & _MASK64, int(N), int(replica), int(stream)])
    return ss.generate_state(2, np.uint64)


def generator(seed, N, replica, stream, step=0):
    """Generator positioned at block ``step`` of the addressed stream."""
    key = stream_key(seed, N, replica, stream)
    counter = np.array([0, 0, 0, int(step)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def noise_block(seed, N, replica, step, d):
    """Standard normal ``(N, d)`` block for one Euler-Maruyama step.

    Row ``k`` is the increment of the particle carrying label ``k``.
    """
    return generator(seed, N, replica, STREAM_NOISE, step).standard_normal((N, d))


def derive_seed(master, *parts):
    """64-bit seed derived from a master seed and integer parts."""
    ss = np.random.SeedSequence([int(master) & _MASK64, *map(int, parts)])
    return int(ss.generate_state(1, np.uint64)[0])
