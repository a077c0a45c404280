"""Seeded random streams.

One root seed is split into independent PCG64 streams, one per consumer,
so that e.g. adding an augmentation draw never shifts the weight init.
"""

from __future__ import annotations

import numpy as np

STREAMS = ("init", "dropout", "sampler", "augment")


def generator(seed: int, stream: str | None = None) -> np.random.Generator:
    """PCG64 generator for ``seed``; ``stream`` selects a named child."""
    if stream is None:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    if stream not in STREAMS:
        raise ValueError(f"unknown random stream {stream!r}; expected one of {STREAMS}")
    child = np.random.SeedSequence(seed, spawn_key=(STREAMS.index(stream),))
    return np.random.Generator(np.random.PCG64(child))


def split(seed: int) -> dict[str, np.random.Generator]:
    return {name: generator(seed, name) for name in STREAMS}
