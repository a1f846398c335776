"""Named random substreams derived from a single root seed.

Every random draw in a simulation comes from a generator keyed by
``(purpose, round, device)``. Two runs that share a root seed therefore see
identical mini-batches and fading regardless of the aggregation scheme, which
is what makes paired scheme comparisons meaningful.
"""
from __future__ import annotations

import numpy as np

# spawn-key prefixes; values are part of the reproducibility contract
PURPOSES = {
    "batch": 0,
    "channel": 1,
    "noise": 2,
    "data": 3,
    "placement": 4,
    "init": 5,
    "probe": 6,
}


class Streams:
    """Factory for independent, reproducible generators."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def get(self, purpose: str, round_: int = 0, device: int = 0) -> np.random.Generator:
        if purpose not in PURPOSES:
            raise KeyError(f"unknown stream purpose {purpose!r}")
        ss = np.random.SeedSequence(
            self.seed, spawn_key=(PURPOSES[purpose], int(round_), int(device))
        )
        return np.random.Generator(np.random.PCG64(ss))

    def batch(self, device: int, round_: int) -> np.random.Generator:
        return self.get("batch", round_, device)

    def channel(self, device: int, round_: int) -> np.random.Generator:
        return self.get("channel", round_, device)

    def noise(self, round_: int) -> np.random.Generator:
        return self.get("noise", round_, 0)

    def __repr__(self) -> str:
        return f"Streams(seed={self.seed})"
