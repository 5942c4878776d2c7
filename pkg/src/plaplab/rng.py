"""Single source of randomness: Philox4x64-10 keyed directly by the 64-bit seed.

The key is ``seed + 2**64 * stream`` and the counter starts at zero, so a
stream is reproducible in any language that implements Philox4x64-10.
"""
import numpy as np

_MASK = (1 << 64) - 1


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    key = (int(seed) & _MASK) | ((int(stream) & _MASK) << 64)
    return np.random.Generator(np.random.Philox(key=key))
