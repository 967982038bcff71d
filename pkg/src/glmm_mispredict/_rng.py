"""Deterministic child RNG streams.

Every stochastic entry point takes a master seed; nested work units (replicate
s, bootstrap draw b, ...) get their own generator derived from the master seed
and an integer path via numpy's splittable SeedSequence. Streams are stable
across thread counts and platforms, which is what makes the ndjson outputs
byte-reproducible.
"""

from __future__ import annotations

import numpy as np

# Fixed ids so stream derivation never depends on dict ordering or call order.
STREAM_IDS = {
    "scenario": 1,
    "simulate": 2,
    "fit": 3,
    "bootstrap": 4,
    "mc": 5,
    "wages": 6,
}


def child_seed_sequence(master_seed: int, *path) -> np.random.SeedSequence:
    """SeedSequence for (master, path); path entries are ints or stream names."""
    key = tuple(
        STREAM_IDS[p] if isinstance(p, str) else int(p) for p in path
    )
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)


def child_rng(master_seed: int, *path) -> np.random.Generator:
    """Generator for (master, path); see child_seed_sequence."""
    return np.random.default_rng(child_seed_sequence(master_seed, *path))
