"""Deterministic random streams.

A stream is identified by a root seed plus an integer path, hashed with
SHA-256 into a 128-bit Philox key.  Philox is counter-based, so any stream
can be constructed directly without advancing shared state; replications
therefore reproduce bit-for-bit regardless of how work is split across
processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def philox_key(seed: int, *path: int) -> np.ndarray:
    """128-bit Philox key: first 16 bytes of SHA-256("seed/p0/p1/...")."""
    text = "/".join(str(int(part)) for part in (seed, *path))
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for the given seed and substream path."""
    return np.random.Generator(np.random.Philox(key=philox_key(seed, *path)))
