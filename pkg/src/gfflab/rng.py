"""Seed handling: every replica gets its own stream derived from (master, index)."""
from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if seed is None:
        raise ValueError("a seed is required")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def replica_rng(master: int, index: int, *salt: int) -> np.random.Generator:
    """Independent stream for replica ``index`` of a run with seed ``master``."""
    ss = np.random.SeedSequence([int(master), *(int(s) for s in salt), int(index)])
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 63 - 1))


def derive_seed(master: int, *salt: int) -> int:
    """Deterministic 63-bit seed for a sub-run identified by ``salt``."""
    ss = np.random.SeedSequence([int(master), *(int(s) for s in salt)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
