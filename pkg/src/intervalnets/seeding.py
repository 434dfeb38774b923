"""Labeled deterministic RNG substreams.

One run seed fans out into independent generators, one per consumer
("init", "shuffle", "dropout", "sample", ...), so adding a consumer or
reordering draws in one place never perturbs the others.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def substream(seed: int, label: str) -> np.random.Generator:
    """A generator keyed by (seed, label); stable across platforms."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))
