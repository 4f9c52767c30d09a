"""Seeded random streams.

Every run derives independent child generators from one integer seed.  Each
named component gets a fixed spawn key, so adding draws to one component never
shifts the draws seen by another.  Generator: numpy PCG64.
"""

from __future__ import annotations

import numpy as np

RNG_VERSION = "pcg64-v1"

# spawn-key index per component; append only, never reorder
STREAMS = ("features", "z_path", "v_path", "noise", "learner", "market_init", "operator")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the child generator for component ``name`` of run ``seed``."""
    if name not in STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; known: {STREAMS}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS.index(name),))
    return np.random.Generator(np.random.PCG64(ss))


def streams(seed: int) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in STREAMS}
