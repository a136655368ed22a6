"""Seed derivation and hashing helpers used across the pipeline.

All randomness in the package flows from one top-level integer seed.
Stage- and item-level generators are derived by hashing the seed together
with string labels, so re-running any stage with the same seed and labels
reproduces its output bit for bit, independently of execution order.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *labels: str) -> int:
    """Derive a child seed from a base seed and a sequence of labels."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


def derived_rng(seed: int, *labels: str) -> np.random.Generator:
    """A fresh numpy Generator for (seed, labels)."""
    return np.random.default_rng(derive_seed(seed, *labels))


def stable_hash(text: str, length: int = 12) -> str:
    """Short hex digest of a canonical string, for config fingerprints."""
    return hashlib.sha256(text.encode()).hexdigest()[:length]
