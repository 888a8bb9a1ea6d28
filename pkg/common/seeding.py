"""Seed derivation for independent, reproducible random streams.

Every stochastic component (path-estimation noise per snapshot, IMU noise per
step, BSM noise per fix, weight init, batch shuffling) draws from its own
``numpy.random.Generator`` seeded by ``derive_seed(master, *keys)``, so results
do not depend on evaluation order or on how work is split across processes.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 output function."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Fold ``keys`` into ``master`` with SplitMix64; order matters."""
    state = splitmix64(int(master) & _MASK64)
    for key in keys:
        state = splitmix64(state ^ (int(key) & _MASK64))
    return state


def rng_for(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


# Stream tags keep different components from sharing a stream.
STREAM_ESTIMATION = 1
STREAM_IMU = 2
STREAM_BSM = 3
STREAM_INIT = 4
STREAM_SHUFFLE = 5
STREAM_SPLIT = 6
STREAM_VALIDATION = 7
