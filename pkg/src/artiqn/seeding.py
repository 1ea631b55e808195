"""Deterministic named RNG streams derived from one master seed.

Every random draw in the system comes from a stream addressed by
(master seed, label, counters...). Streams are derived independently, so
adding a new label never perturbs draws on existing ones.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeedTree:
    """Factory for named, counter-indexed RNG streams."""

    master_seed: int

    def stream(self, label: str, *counters: int) -> np.random.Generator:
        """Return a fresh generator for (label, counters).

        The same arguments always yield a generator producing the same
        sequence; distinct arguments yield independent streams.
        """
        entropy = [int(self.master_seed), _label_key(label), *map(int, counters)]
        return np.random.default_rng(np.random.SeedSequence(entropy))
