"""Seeded, splittable random number generation.

Every randomized operation in this package draws from a PCG64 bit generator
seeded through ``numpy.random.SeedSequence``.  Sub-streams are derived from a
master seed plus a tuple of stream labels (strings are hashed to 64-bit
integers with SHA-256), so any cell of a sweep can be re-generated in
isolation and two runs with the same master seed are bit-identical.

Derivation rule, spelled out so other implementations can reproduce it:

    entropy = [master_seed] + [label_as_int for each label]
    stream  = PCG64(SeedSequence(entropy))

where a string label maps to ``int.from_bytes(sha256(utf8(label))[:8], "big")``
and integer labels are used as-is.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["label_to_int", "subseed", "generator"]


def label_to_int(label: str | int) -> int:
    """Map a stream label to a stable 64-bit integer."""
    if isinstance(label, (int, np.integer)):
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def subseed(master_seed: int, *labels: str | int) -> np.random.SeedSequence:
    """Derive the seed sequence for the sub-stream named by ``labels``."""
    entropy = [int(master_seed)] + [label_to_int(lab) for lab in labels]
    return np.random.SeedSequence(entropy)


def generator(master_seed: int, *labels: str | int) -> np.random.Generator:
    """A PCG64 generator for the sub-stream named by ``labels``."""
    return np.random.Generator(np.random.PCG64(subseed(master_seed, *labels)))
