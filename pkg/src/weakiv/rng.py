"""Deterministic, splittable random streams for parallel Monte Carlo.

Every draw in the package comes from a Philox counter-based generator
keyed by an integer seed plus an integer path (for example
``(cell_index, replication)``).  Streams are independent of worker
count and scheduling order: any piece of work re-derives its own stream
from the same key, so results are bit-identical however the work is
partitioned.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "ALGORITHM"]

ALGORITHM = "philox4x64 keyed by SeedSequence(seed, spawn_key=path)"


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(seed=ss))
