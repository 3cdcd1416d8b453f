"""Deterministic stream derivation from one master seed.

Every random task in the package derives its generator as

    rng_for(master_seed, purpose, index, ...)

where purpose is one of the small integer tags below and the remaining
path entries number replicas, clones, grid points and so on. Streams
with different paths are statistically independent, and the derivation
does not depend on scheduling, so results are reproducible bit for bit
for any worker-pool size.
"""

from __future__ import annotations

import numpy as np

# purpose tags (first path entry)
SIM_INIT = 1
SIM_DYNAMICS = 2
LLN_REPLICA = 3
FUNCTIONAL_MC = 4
OPTIMIZER = 5
CLONING = 6
RELAXATION = 7
CONTROL = 8
SELFTEST = 9


def seed_sequence(master_seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(p) for p in path))


def rng_for(master_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master_seed, *path))
