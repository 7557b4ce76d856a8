"""Labelled random streams derived from a single root seed.

Every stochastic component asks for a stream by a stable label, so runs are
reproducible from one scenario seed and adding a component never perturbs the
draws of another.
"""

from __future__ import annotations

from hashlib import blake2b

import numpy as np


def derive_seed(root_seed: int, label: str) -> int:
    h = blake2b(f"{int(root_seed)}:{label}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class SeedBank:
    """Hands out independent numpy generators keyed by label."""

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)

    def stream(self, label: str) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self.root_seed, label))
