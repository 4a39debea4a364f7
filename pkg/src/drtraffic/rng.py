"""Deterministic random streams.

Every stochastic concern (spawning, parameter sampling, policy sampling, ...)
gets its own generator derived from (seed, stream_id[, episode]). Identical
keys always reproduce the identical draw sequence, which is what makes whole
runs bit-replayable.
"""

from __future__ import annotations

import numpy as np

# Stream ids, one per concern. Keep stable: changing them changes every run.
STREAM_SPAWN = 0
STREAM_PARAMS = 1
STREAM_POLICY = 2
STREAM_INIT = 3  # network weight init / misc


def make_stream(seed: int, stream_id: int, episode: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, stream_id, episode)."""
    ss = np.random.SeedSequence((int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream_id), int(episode)))
    return np.random.Generator(np.random.PCG64(ss))


class RngBundle:
    """The per-world set of streams."""

    def __init__(self, seed: int, episode: int = 0):
        self.seed = int(seed)
        self.episode = int(episode)
        self.spawn = make_stream(seed, STREAM_SPAWN, episode)
        self.params = make_stream(seed, STREAM_PARAMS, episode)
        self.policy = make_stream(seed, STREAM_POLICY, episode)

    def respawned(self, episode: int) -> "RngBundle":
        return RngBundle(self.seed, episode)
