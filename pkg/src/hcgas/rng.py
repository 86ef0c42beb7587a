"""Counter-based random streams.

Every random number is a pure function of (seed, replica, node, counter):
replica r of a run gets key ``combine(seed_key(seed), r)``, a dyadic square
(level, ix, iy) in that replica gets ``combine(combine(combine(key, level),
ix), iy)``, and uniform number i of a key is ``mix64(key + (i + 1) * GAMMA)``
scaled to 53 bits. Results therefore do not depend on traversal order,
chunking or the number of workers.
"""

import numpy as np

from . import _backend
from ._fallback import GAMMA, MASK, combine, mix64, nkey, unif

SEED_SALT = 0x243F6A8885A308D3

__all__ = ["GAMMA", "seed_key", "replica_key", "replica_keys", "node_key", "node_keys",
           "uniform", "stream", "numpy_generator", "combine", "mix64"]


def seed_key(seed: int) -> int:
    return mix64((int(seed) & MASK) ^ SEED_SALT)


def replica_key(seed: int, replica: int) -> int:
    return combine(seed_key(seed), int(replica))


def replica_keys(seed: int, start: int, count: int) -> np.ndarray:
    return _backend.replica_keys(seed_key(seed), int(start), int(count))


def node_key(rkey: int, level: int, ix: int, iy: int) -> int:
    return nkey(int(rkey), int(level), int(ix), int(iy))


def node_keys(rkeys, level, ix, iy) -> np.ndarray:
    """Keys of one square across many replicas."""
    return _backend.node_keys(np.ascontiguousarray(rkeys, dtype=np.uint64), int(level),
                              int(ix), int(iy))


def uniform(key: int, i: int) -> float:
    return unif(int(key), int(i))


def stream(key: int, start: int, count: int) -> np.ndarray:
    return _backend.stream(int(key), int(start), int(count))


def numpy_generator(seed: int, *labels: int) -> np.random.Generator:
    """A numpy Generator for purposes outside the tree (chains, controls)."""
    k = seed_key(seed)
    for lab in labels:
        k = combine(k, int(lab))
    return np.random.Generator(np.random.Philox(key=k))
