"""Deterministic named RNG streams derived from a single root seed."""

from __future__ import annotations

import hashlib
import random


def child_seed(root_seed: int, name: str) -> int:
    """Map (root seed, stream name) to a stable 64-bit child seed."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class SeedSplitter:
    """Hands out independent, reproducible ``random.Random`` streams by name.

    The same (root_seed, name) pair always yields an identically seeded
    stream, so subsystems can be added or reordered without perturbing each
    other's randomness.
    """

    def __init__(self, root_seed: int):
        self.root_seed = root_seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        if not name:
            raise ValueError("stream name must be non-empty")
        if name not in self._streams:
            self._streams[name] = random.Random(child_seed(self.root_seed, name))
        return self._streams[name]
