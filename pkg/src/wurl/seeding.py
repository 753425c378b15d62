"""Deterministic fan-out of one run seed into independent component streams.

Each stream is keyed by a path of names/ints, e.g. ``make_rng(seed, "agent", 3)``.
Keys are hashed into the ``SeedSequence`` spawn key, so adding a new
component never shifts the numbers another component draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(k) for k in keys))


def make_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys) -> int:
    """A plain integer seed for a sub-component (e.g. to record in a config)."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint32)[0])
