"""Seed derivation and config fingerprinting.

Every random draw in the package flows from one master seed. Component
streams are derived by mixing a CRC32 of each scope label into a numpy
SeedSequence, so parallel schedules cannot change what any component
sees: ``rng(master, "datagen", scenario_index)`` is the same stream no
matter which worker asks for it.
"""

from __future__ import annotations

import hashlib
import json
import zlib

import numpy as np


def _scope_key(item) -> int:
    if isinstance(item, (int, np.integer)):
        return int(item) & 0xFFFFFFFF
    return zlib.crc32(str(item).encode("utf-8"))


def seed_sequence(master: int, *scope) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF] + [_scope_key(s) for s in scope])


def rng(master: int, *scope) -> np.random.Generator:
    """Deterministic generator for (master seed, scope labels)."""
    return np.random.default_rng(seed_sequence(master, *scope))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def fingerprint(obj) -> str:
    """Stable hex digest of a JSON-representable config tree."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]
