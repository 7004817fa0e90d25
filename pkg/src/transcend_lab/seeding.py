"""Deterministic sub-seed derivation.

All randomness in the package flows from one master seed. Sub-seeds are
derived by hashing the master seed together with a purpose path, so that
independent pipeline stages (and independent experts, samples, restarts)
get decorrelated but reproducible streams, stable under changes elsewhere
in the pipeline.
"""

from __future__ import annotations

import hashlib

import numpy as np

_DIGEST_SIZE = 8  # 64-bit sub-seeds


def seed_for(master_seed: int, *purpose: object) -> int:
    """Derive a 64-bit sub-seed from a master seed and a purpose path."""
    path = "/".join(str(p) for p in purpose)
    payload = f"{master_seed}|{path}".encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=_DIGEST_SIZE).digest()
    return int.from_bytes(digest, "big")


def rng_for(master_seed: int, *purpose: object) -> np.random.Generator:
    """A numpy Generator seeded by :func:`seed_for`."""
    return np.random.default_rng(seed_for(master_seed, *purpose))
