"""Deterministic random-stream derivation.

Every source of randomness in a run is a named substream of one master
seed, so that runs are reproducible bit for bit and adding a consumer
never perturbs the streams of existing ones.
"""

import zlib

import numpy as np

__all__ = ["substream", "substream_seed"]


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"substream keys must be nonnegative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream_seed(master_seed: int, *names) -> np.random.SeedSequence:
    """Derive the seed sequence for the substream named by ``names``."""
    return np.random.SeedSequence([_key(master_seed)] + [_key(n) for n in names])


def substream(master_seed: int, *names) -> np.random.Generator:
    """Independent generator for one named consumer, e.g.
    ``substream(7, "compressor", "y", node)``."""
    return np.random.default_rng(substream_seed(master_seed, *names))
