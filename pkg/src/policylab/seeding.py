"""Named deterministic RNG streams derived from a single root seed.

Every random draw in the package comes from a stream addressed by a
(root seed, path) pair, where the path mixes string labels and integer
indices (step number, group index, ...). Identical (seed, path) always
yields an identical stream, independent of call order or parallelism.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(label: str) -> int:
    """Stable 32-bit key for a stream label (process-independent)."""
    return zlib.crc32(label.encode("utf-8"))


def named_stream(root_seed: int, *path: int | str) -> np.random.Generator:
    """Return the generator addressed by (root_seed, *path).

    Path components may be non-negative ints or string labels; labels are
    hashed with crc32 so the addressing never depends on Python's salted
    hash().
    """
    keys = [stream_key(p) if isinstance(p, str) else int(p) for p in path]
    if any(k < 0 for k in keys):
        raise ValueError("stream path integers must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *keys]))
