"""Reproducible, splittable random streams.

Every stream is a Philox counter-based generator keyed by
``SeedSequence(seed, spawn_key=stream)``. A stream is addressed by a seed plus
a tuple of non-negative integers, so any consumer (a sequence index, a
training iteration, a rollout slot) can derive an independent stream without
coordinating with anyone else.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream"]


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if isinstance(self.stream, int):
            object.__setattr__(self, "stream", (self.stream,))
        object.__setattr__(self, "stream", tuple(int(s) for s in self.stream))
        if int(self.seed) < 0 or any(s < 0 for s in self.stream):
            raise ValueError("seed and stream keys must be non-negative")
        object.__setattr__(self, "seed", int(self.seed))

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))
