"""Deterministic named random substreams.

Every stochastic piece of the library (data synthesis, weight init, spatial
partition shuffles) draws from its own generator derived from a single root
seed plus a label. Streams with different labels are independent; the same
(seed, label) pair always reproduces the same sequence, regardless of the
order in which other streams were consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, label: str) -> np.random.Generator:
    """Generator for the named stream of a root seed."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
