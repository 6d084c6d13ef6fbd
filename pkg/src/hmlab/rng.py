"""Deterministic random streams.

All randomness in the lab derives from one scenario seed through named
substreams, so that every stage is reproducible in isolation and walk-level
Monte Carlo results do not depend on batching or scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = np.uint64


def _digest_words(*parts) -> list[int]:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    d = h.digest()
    return [int.from_bytes(d[8 * i : 8 * (i + 1)], "little") for i in range(4)]


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the named substream (seed, *path)."""
    w = _digest_words(int(seed), *path)
    return np.random.Generator(np.random.Philox(key=np.array(w[:2], dtype=_U64)))


def walk_generator(seed: int, stream: str, walk_index: int) -> np.random.Generator:
    """Counter-based generator for one Monte-Carlo walk.

    Keyed by (seed, stream, walk_index): a walk's random numbers are a pure
    function of its index, so estimates are identical no matter how walks are
    chunked or distributed across workers.
    """
    w = _digest_words(int(seed), stream)
    key = np.array([w[0], _U64(np.uint64(walk_index) ^ _U64(w[1]))], dtype=_U64)
    return np.random.Generator(np.random.Philox(key=key))


def walk_uniforms(seed: int, stream: str, walk_indices: np.ndarray, n: int) -> np.ndarray:
    """Draw the first ``n`` uniforms of each listed walk, shape (len, n)."""
    out = np.empty((len(walk_indices), n))
    for row, w in enumerate(walk_indices):
        out[row] = walk_generator(seed, stream, int(w)).random(n)
    return out
