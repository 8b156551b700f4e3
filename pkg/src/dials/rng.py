"""Seeded counter-based random streams.

Every source of randomness in a run is a Philox substream derived from
(run_seed, *path), where the path names the consumer, e.g.
``stream(seed, "ials", agent_id, round_idx)``.  Substreams are independent
of worker scheduling, so a run is reproducible for any worker count.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "path_entropy"]


def _encode(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream path parts must be int or str, got {type(part)!r}")


def path_entropy(seed: int, *path) -> list[int]:
    """Entropy word list for (seed, *path), stable across platforms."""
    return [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_encode(p) for p in path]


def stream(seed: int, *path) -> np.random.Generator:
    """Independent Generator for the substream named by (seed, *path)."""
    ss = np.random.SeedSequence(path_entropy(seed, *path))
    return np.random.Generator(np.random.Philox(ss))
