"""Seeded random streams.

Stream ``i`` of master seed ``s`` is a Philox (counter-based) generator keyed by
``SeedSequence(s, spawn_key=(i,))``, so a task's draws never depend on how many
other tasks exist or in which order they run.
"""

from __future__ import annotations

import numpy as np


def bit_generator(master_seed: int, stream: int) -> np.random.Philox:
    return np.random.Philox(np.random.SeedSequence(int(master_seed), spawn_key=(int(stream),)))


def generator(master_seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(bit_generator(master_seed, stream))
