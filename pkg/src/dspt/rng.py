"""Counter-based uniforms from SplitMix64-seeded xoshiro256**.

Each sample index gets its own generator state derived from (seed, index),
so draws do not depend on evaluation order or on numpy's bit generators.
"""

import numpy as np

_M64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(state):
    # state: uint64 array, advanced in place; returns next output
    state += _GOLDEN
    z = state.copy()
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


def _xoshiro_next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def uniforms(seed: int, counters, stream: int = 0) -> np.ndarray:
    """One U[0,1) draw per counter value, deterministic in (seed, stream, counter)."""
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = np.full(counters.shape, (seed ^ (stream * 0xD1B54A32D192ED03)) & _M64, dtype=np.uint64)
        base = _splitmix64(base.copy())
        sm = base ^ (counters * np.uint64(0xA0761D6478BD642F))
        s = [_splitmix64(sm) for _ in range(4)]
        out = _xoshiro_next(s)
    return (out >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
