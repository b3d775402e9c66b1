"""Named random sub-streams derived from a single integer seed."""
import zlib

import numpy as np


def substream(seed, name):
    """Independent generator for ``name``; stable across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))]))


def as_generator(seed_or_rng, name="default"):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return substream(seed_or_rng, name)
