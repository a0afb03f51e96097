"""Keyed random streams.

Every random draw in the library comes from a generator keyed by
``(global_seed, *path)`` where the path names the purpose (``"data"``,
``"noise"``, ...) and any indices (client id, round). The underlying bit
generator is Philox, a counter-based generator, so the value of a draw
depends only on its key and never on the order in which workers ran.
"""

from __future__ import annotations

import zlib

import numpy as np


def _encode(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"negative key component {part}")
        return int(part)
    if isinstance(part, str):
        # offset keeps string tags from colliding with small integer ids
        return (1 << 32) + zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported key component {part!r}")


def keyed_rng(seed: int, *path) -> np.random.Generator:
    """Return an independent generator for the stream named by ``path``."""
    entropy = [_encode(seed)] + [_encode(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_rng(key, *path) -> np.random.Generator:
    """Accept either a Generator or an integer seed (plus optional path)."""
    if isinstance(key, np.random.Generator):
        if path:
            raise TypeError("a path is only meaningful with an integer seed")
        return key
    return keyed_rng(int(key), *path)
