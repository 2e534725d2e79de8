"""Reproducible seed derivation."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(master_seed: int, role: str, index: int = 0) -> int:
    """Stable 63-bit seed from ``(master_seed, role, index)``.

    The role string is hashed with CRC32, so derived seeds do not depend on
    Python's per-process hash randomization.
    """
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(role.encode()), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def rng_for(master_seed: int, role: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, role, index))
