"""Counter-based random streams.

Every random draw in the package comes from numpy's Philox4x64-10
generator. A stream is addressed by a path of integers
``(seed, domain, i, j)``: the 128-bit key is ``(seed, domain)`` and the
256-bit starting counter is ``(0, 0, i, j)``. Because Philox is a keyed
counter-mode generator, the draws of stream ``(seed, domain, i, j)`` depend
only on that tuple, never on which other streams were consumed before it or
on which thread consumed them.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# domains keep simulation and bootstrap draws apart for the same seed
SIMULATION = 1
BOOTSTRAP = 2


def stream(seed: int, domain: int, i: int = 0, j: int = 0) -> np.random.Generator:
    key = np.array([int(seed) & MASK64, int(domain) & MASK64], dtype=np.uint64)
    counter = np.array([0, 0, int(i) & MASK64, int(j) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed
