"""Named random sub-streams derived from a single 64-bit seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``.

    The same arguments always give the same stream, regardless of how many
    other streams were drawn before it, so per-sample work can be reordered
    or parallelised without changing results.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(n) for n in names]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
