"""Seeded random streams.

Every random draw in an experiment comes from a named sub-stream of one
experiment seed. A stream is a Philox counter-based generator keyed by
``SeedSequence(seed, spawn_key=(stream_id,))``, so streams are independent
and adding a new consumer never shifts the draws of an existing one.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "init": 0,
    "data": 1,
    "up": 2,
    "down": 3,
    "noise": 4,
    "test": 5,
    "test_down": 6,
    "integral": 7,
    "probe": 8,
    "shuffle": 9,
}


def make_rng(seed: int, stream: str | int = 0) -> np.random.Generator:
    """Return the generator for ``stream`` under experiment ``seed``."""
    stream_id = STREAMS[stream] if isinstance(stream, str) else int(stream)
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(stream_id,))
    return np.random.Generator(np.random.Philox(seq))


def check_rng(rng) -> np.random.Generator:
    if rng is None:
        return np.random.Generator(np.random.Philox())
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(int(rng))
