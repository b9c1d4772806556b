"""Labeled random streams.

Every stochastic concern (weight init, column masks, dropout, synthetic
graphs, splits) draws from its own generator derived from the run seed and
a fixed label.  Toggling one feature therefore never shifts the randomness
consumed by another, which keeps ablation runs comparable and reports
reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["labeled_stream"]


def labeled_stream(seed: int, label: str) -> np.random.Generator:
    """Return a generator keyed by ``(seed, label)``.

    The label is folded in through a CRC so distinct labels give
    statistically independent streams while staying stable across runs.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8"))])
