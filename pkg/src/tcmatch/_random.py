"""Named, seed-derived random streams.

Every stochastic step draws from its own PCG64 generator keyed by the run
seed plus string labels, so adding a draw in one place never shifts
another component's sequence.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(text: str) -> int:
    """64-bit hash that is stable across processes and platforms."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def substream(seed: int, *keys) -> np.random.Generator:
    entropy = [int(seed) & _MASK64] + [stable_hash(str(k)) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
