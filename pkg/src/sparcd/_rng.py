"""Deterministic RNG streams derived from a master seed.

Every stochastic component draws from its own counter-based stream keyed by
(master seed, stream tag, index...), so results never depend on execution
order or worker count.
"""
from __future__ import annotations

from numpy.random import Generator, Philox, SeedSequence

# Stream tags. Keep stable: artifacts are only reproducible across versions
# if these never change.
STREAM_SIM_POPULATION = 0   # shared population quantities (covariance bases)
STREAM_SIM_X = 1            # per-subject draws, condition X
STREAM_SIM_Y = 2            # per-subject draws, condition Y
STREAM_PERMUTATION = 3      # per-replicate permutation draws


def spawn_rng(seed: int, *key: int) -> Generator:
    """Return a Philox generator for the stream (seed, *key)."""
    return Generator(Philox(SeedSequence(seed, spawn_key=key)))
