"""Reservoir-sampled rehearsal buffer."""

from __future__ import annotations

import numpy as np


class RehearsalBuffer:
    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.items: list = []
        self.seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def add(self, item, rng: np.random.Generator) -> None:
        """Algorithm R: after s insertions every item is retained with prob capacity/s."""
        self.seen += 1
        if self.capacity == 0:
            return
        if len(self.items) < self.capacity:
            self.items.append(item)
            return
        slot = int(rng.integers(0, self.seen))
        if slot < self.capacity:
            self.items[slot] = item

    def sample(self, rng: np.random.Generator, count: int = 1) -> list:
        if not self.items:
            return []
        idx = rng.integers(0, len(self.items), size=count)
        return [self.items[i] for i in idx]
