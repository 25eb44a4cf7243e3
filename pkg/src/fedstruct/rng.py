"""Seeded random streams.

Every stochastic step draws from a child stream derived from
``(seed, purpose, index)``::

    SeedSequence(entropy=seed, spawn_key=(crc32(purpose), index))

so that two steps with different purposes never share random numbers and
results do not depend on the order in which steps run.
"""

import zlib

import numpy as np


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def child_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(purpose_code(purpose), int(index)))
    return np.random.Generator(np.random.PCG64(ss))
