# GraphicalMTPOptimizer/src/rng.py
import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Builds a deterministic Philox generator for ``seed`` and an optional key path.

    Philox is counter-based, so streams are reproducible across platforms.
    Distinct key paths (e.g. a block index) give independent streams, which is
    what lets blocked work produce the same numbers regardless of how many
    workers process the blocks.

    Args:
        seed (int): Non-negative run seed.
        *keys (int): Non-negative sub-stream identifiers.

    Returns:
        np.random.Generator: A fresh generator.
    """
    entropy = [int(seed), *[int(k) for k in keys]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
