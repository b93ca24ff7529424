import numpy as np


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept ints, None, or a SeedSequence.

    An existing SeedSequence is copied so that ``spawn`` on the result
    always yields the same children.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)
