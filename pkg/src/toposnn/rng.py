"""Deterministic named random streams.

All randomness in a run flows from one root seed; each subsystem draws from
its own named stream so that toggling one analysis never perturbs another's
(or training's) random numbers.
"""

import hashlib

import numpy as np


def stream_seed(root_seed, name):
    """Stable 64-bit child seed for (root_seed, name)."""
    digest = hashlib.sha256(f"{int(root_seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def named_rng(root_seed, name):
    """numpy Generator seeded from the named stream."""
    return np.random.default_rng(stream_seed(root_seed, name))
