"""Counter-based splittable random streams.

Every stochastic routine takes an explicit stream derived from a 64-bit
root seed plus an integer key path (run index, agent index, purpose...).
Philox is counter-based, so identical (seed, key) pairs reproduce the
same draws bit-exactly on any platform, and distinct key paths give
statistically independent streams.
"""

from __future__ import annotations

import numpy as np


def stream(root_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the given root seed and key path."""
    ss = np.random.SeedSequence(entropy=int(root_seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def inverse_cdf(row_cumsum: np.ndarray, u: float) -> int:
    """Index drawn by inverse-CDF over a cumulative row, in index order."""
    return int(np.searchsorted(row_cumsum, u, side="right"))
