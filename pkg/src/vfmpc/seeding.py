"""Deterministic seed derivation: one master seed fans out to labeled streams.

Every stochastic role (world sampling, planner noise, ensemble scoring draws,
per-episode streams) gets its own sub-seed so that adding or removing one
consumer never perturbs the others.  The mixing function is fixed: blake2b
over the decimal master seed and the role label, truncated to 64 bits, so
derived streams are stable across platforms and releases.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, label: str) -> int:
    digest = hashlib.blake2b(
        f"{master_seed}:{label}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def rng_for(master_seed: int, label: str) -> np.random.Generator:
    """Seeded generator for one named role under a master seed."""
    return np.random.default_rng(derive_seed(master_seed, label))
