"""
Seeded random substreams.

Each consumer draws from its own generator derived from (seed, label), so
adding a consumer never shifts the draws seen by existing ones.
"""

import zlib

import numpy as np


def label_word(label: str) -> int:
    return zlib.crc32(label.encode('utf-8'))


def substream(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), label_word(label)])
