"""Seeded random streams.

Every stochastic operation in this package draws from numpy's PCG64 bit
generator, keyed through ``SeedSequence`` so that distinct (seed, stream)
pairs yield statistically independent streams. Stream keys are plain
integers; callers name their streams with the constants below instead of
ad-hoc seed arithmetic, which keeps runs reproducible when new consumers
of randomness are added.
"""

from __future__ import annotations

import numpy as np

# Stream identifiers. New consumers append; never renumber.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_BATCH = 2
STREAM_NOISE = 3
STREAM_DROPOUT = 4
STREAM_SCORE = 5

__all__ = [
    "STREAM_DATA",
    "STREAM_INIT",
    "STREAM_BATCH",
    "STREAM_NOISE",
    "STREAM_DROPOUT",
    "STREAM_SCORE",
    "generator",
    "derive_seed",
]


def generator(seed: int, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` on the given stream key."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """Derive a child integer seed, e.g. for per-member training runs."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
