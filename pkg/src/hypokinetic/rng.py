"""Counter-based random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
backed by Philox, keyed through a ``SeedSequence`` whose spawn key names
the block of paths and the purpose of the stream. A block's draws never
depend on how many blocks exist or which worker consumes them.
"""
from __future__ import annotations

import numpy as np

BLOCK_SIZE = 1024

# stream purposes inside a block
SUBORDINATOR = 0
GAUSSIAN = 1

SCHEME = "philox4x64/seedsequence(entropy=seed, spawn_key=(block, purpose))"


def stream(seed: int, block: int = 0, purpose: int = SUBORDINATOR) -> np.random.Generator:
    """Independent generator for ``(seed, block, purpose)``."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def n_blocks(n_paths: int, block_size: int = BLOCK_SIZE) -> int:
    return -(-n_paths // block_size)
