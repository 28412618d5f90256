"""Seed derivation: all randomness funnels through one master seed.

Stage seeds are derived as ``derive_seed(master, label)`` where the label
names the consumer (e.g. "split", "train.epoch3"). The derivation is a
stable hash, so adding a new consumer never perturbs existing streams.
"""

import hashlib

import numpy as np


def derive_seed(master: int, label: str) -> int:
    """Derive a 32-bit child seed from a master seed and a stage label."""
    digest = hashlib.blake2b(f"{master}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest[:4], "little")


def rng_for(master: int, label: str) -> np.random.Generator:
    """Generator seeded deterministically for one named consumer."""
    return np.random.default_rng(derive_seed(master, label))
