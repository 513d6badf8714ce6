"""Counter-based RNG substreams.

Every stochastic task (subject, chain, replication, ...) gets its own Philox
stream keyed by ``(seed, domain << 56 | index)``, so results do not depend on
how work is ordered or distributed across processes.
"""

from __future__ import annotations

import numpy as np

DOMAIN_SUBJECT = 1
DOMAIN_CHAIN = 2
DOMAIN_MULTISTART = 3
DOMAIN_REPLICATION = 4
DOMAIN_SCENARIO = 5

_MASK = (1 << 64) - 1


def substream(seed: int, domain: int, index: int) -> np.random.Generator:
    """Independent generator for task ``index`` of ``domain`` under ``seed``."""
    if index < 0 or index >= (1 << 56):
        raise ValueError("substream index out of range")
    key = np.array([seed & _MASK, ((domain & 0xFF) << 56) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, domain: int, index: int) -> int:
    """A 63-bit child seed, for nesting one substream scheme inside another."""
    return int(substream(seed, domain, index).integers(1 << 63))
