"""Deterministic split of one master seed into independent named streams.

``stream(master, purpose, *keys)`` builds a ``SeedSequence`` whose entropy is
the master seed and whose spawn key is ``(PURPOSE_ID, *keys)``. Two streams
with different purposes or keys are statistically independent, and each is a
pure function of its arguments, so the result never depends on the order in
which clients are scheduled.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {
    "data": 1,
    "partition": 2,
    "split": 3,
    "init": 4,
    "batches": 5,
    "graph": 6,
    "freqs": 7,
}


def seed_sequence(master: int, purpose: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master), spawn_key=(PURPOSES[purpose], *map(int, keys)))


def stream(master: int, purpose: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, purpose, *keys))
