"""Counter-based random streams.

Every random quantity in the package is drawn from a stream keyed by
``(master_seed, purpose, *indices)``. Keys are mixed through
``numpy.random.SeedSequence`` so a stream never depends on how many draws
happened before it or on which worker asked for it.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = 2**64 - 1


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def seed_sequence(master_seed: int, purpose: str, *indices: int) -> np.random.SeedSequence:
    if any(int(i) < 0 for i in indices):
        raise ValueError(f"stream indices must be non-negative, got {indices}")
    return np.random.SeedSequence(
        entropy=int(master_seed) & _MASK64,
        spawn_key=(_purpose_code(purpose), *(int(i) for i in indices)),
    )


def stream(master_seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Independent generator for one ``(purpose, indices)`` key."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, purpose, *indices)))


def derive_seed(master_seed: int, purpose: str, *indices: int) -> int:
    """63-bit integer seed, e.g. for naming generated instances."""
    state = seed_sequence(master_seed, purpose, *indices).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31 | int(state[1]) >> 1) & (2**63 - 1)
