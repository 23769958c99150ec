"""Deterministic RNG stream derivation.

All randomness in the package flows from a single master seed. Independent
streams (per realization, per video, per epoch, ...) are derived from the
master seed plus a key, so concurrent work never shares generator state and
reruns are bit-reproducible.
"""

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"rng key parts must be int or str, got {type(part)!r}")


def derive_rng(master_seed: int, *key) -> np.random.Generator:
    """Generator for stream (master_seed, *key); same inputs, same stream."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [_key_part(p) for p in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))
