"""
Random stream derivation
One run seed expands into independent, named numpy generators
"""

import hashlib

import numpy as np


def _purpose_code(purpose: str) -> int:
    # stable across interpreter runs, unlike hash()
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """
    Derive a generator from (seed, purpose, indices)

    Args:
        seed: Global run seed
        purpose: Stream name, e.g. "dropout" or "augment"
        indices: Counters such as pass index and layer index

    Returns:
        A PCG64 generator that depends only on the arguments
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _purpose_code(purpose)]
    entropy.extend(int(i) for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
