"""Deterministic seed derivation and generator construction.

All randomness in the package flows through numpy's Philox generator, a
counter-based generator whose output is identical across platforms for a
given key.  Substreams (data pieces, factor blocks, outer iterations) use
keys derived from a master seed with the splitmix64 mixing function:

    derive_seed(master, index) = splitmix64(master + (index + 1) * GOLDEN)

where GOLDEN = 0x9E3779B97F4A7C15 and arithmetic is modulo 2**64.  The
derivation is part of the on-disk reproducibility contract: the same
(master seed, index) pair yields the same substream on every machine.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 scrambling round of a 64-bit integer."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master: int, index: int) -> int:
    """Derive the seed of substream `index` from a master seed."""
    if index < 0:
        raise ValueError("substream index must be nonnegative")
    return splitmix64((int(master) + (index + 1) * _GOLDEN) & _MASK64)


def generator(seed: int) -> np.random.Generator:
    """Counter-based generator for the given 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))
