"""Counter-based seed expansion.

Every random stream in the package is derived from one global seed plus a
tuple of small integers (a stream tag and per-item counters), so any item
can be regenerated in isolation and partial re-runs stay consistent.
"""

from __future__ import annotations

import zlib

import numpy as np

# stream tags; keep values stable, they are part of the reproducibility contract
STREAMS = {
    "corpus": 1,
    "train": 2,
    "reference": 3,
    "negative": 4,
    "extractor": 5,
    "index": 6,
    "queries": 7,
    "activation": 8,
    "noise": 9,
    "eot": 10,
}


def stream_id(name: str) -> int:
    if name in STREAMS:
        return STREAMS[name]
    return 1000 + zlib.crc32(name.encode()) % 1_000_000


def derive_seed(seed: int, stream: str, *counters: int) -> int:
    """Deterministic 63-bit child seed for ``(seed, stream, *counters)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_id(stream), *map(int, counters)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(seed: int, stream: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(stream_id(stream), *map(int, counters)))
    )
