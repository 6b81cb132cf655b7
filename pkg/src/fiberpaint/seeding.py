"""Deterministic PRNG stream derivation.

Every source of randomness in the package draws from a generator derived
from (master seed, stream id, *indices), so any sample is reproducible
without threading generator state through the call tree.
"""

from __future__ import annotations

import numpy as np

STREAM_TRAINER_STATE = 0
STREAM_MODEL_INIT = 1
STREAM_PHANTOM_GEOMETRY = 2
STREAM_PHANTOM_NOISE = 3
STREAM_SCAN_SEED = 4
STREAM_SPLIT = 5
STREAM_EPOCH_SAMPLE = 6
STREAM_EPOCH_SHUFFLE = 7
STREAM_AUGMENT = 8
STREAM_VALIDATION = 9


def derive_rng(master_seed: int, stream: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), int(stream), *map(int, indices)])


def derive_seed(master_seed: int, stream: int, *indices: int) -> int:
    """A scalar seed derived from the keyed stream (for nested configs)."""
    return int(derive_rng(master_seed, stream, *indices).integers(2**63))
