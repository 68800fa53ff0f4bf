"""Deterministic named RNG substreams.

Every stochastic component draws from its own generator, derived from the
master seed plus a name path. Adding a consumer never shifts the draws of an
existing one.
"""

import hashlib

import numpy as np


def named_rng(master_seed: int, *parts) -> np.random.Generator:
    """Generator for the substream identified by the given name parts."""
    if not parts:
        raise ValueError("at least one name part is required")
    tag = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    entropy = int.from_bytes(digest[:16], "little")
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), entropy]))


def named_seed(master_seed: int, *parts, bits: int = 63) -> int:
    """Stable integer seed for consumers that cannot take a Generator."""
    rng = named_rng(master_seed, *parts)
    return int(rng.integers(0, 2 ** bits))
