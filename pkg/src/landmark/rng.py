"""Seeded, splittable random streams.

All randomness goes through numpy's ``PCG64`` bit generator seeded by a
``SeedSequence``.  Child streams are derived by appending a stable 32-bit
key (CRC-32 of a label string) to the root entropy, so the stream for
"lam.conv1" does not depend on how many other streams were drawn first.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8")) & 0xFFFFFFFF


def make_rng(seed: int, *labels: str | int) -> np.random.Generator:
    keys = [stream_key(x) if isinstance(x, str) else int(x) for x in labels]
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(keys))
    return np.random.Generator(np.random.PCG64(ss))
