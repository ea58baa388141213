"""Counter-based per-sample random streams.

Sample ``i`` of a run with seed ``s`` draws from Philox keyed by ``s`` with
its counter starting at ``i << 128``, so every sample owns a disjoint block
of the counter space and results do not depend on scheduling.
"""

from __future__ import annotations

import numpy as np

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    if seed is None:
        raise ValueError("seed: randomized runs require an explicit seed")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError("seed: must be an unsigned 64-bit integer")
    return seed


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index``."""
    return np.random.Generator(np.random.Philox(key=check_seed(seed), counter=int(index) << 128))


def streams(seed: int, start: int, count: int) -> list[np.random.Generator]:
    return [stream(seed, start + i) for i in range(count)]


def derive(seed: int, label: str) -> int:
    """Sub-seed for a named sub-experiment (stable across runs and platforms)."""
    g = np.random.Generator(np.random.Philox(key=check_seed(seed),
                                             counter=int.from_bytes(label.encode()[:16], "little")))
    return int(g.integers(0, 2**63))
