"""Deterministic split-by-label random streams.

A 64-bit master seed is expanded into independent ``numpy`` generators,
one per label. The label is hashed with CRC32 so the mapping does not
depend on Python's per-process string hashing.
"""
from __future__ import annotations

import zlib

import numpy as np

SEEDING_VERSION = 1


def _label_key(label: str) -> int:
    return zlib.crc32(f"v{SEEDING_VERSION}:{label}".encode("utf-8"))


def stream(seed: int, label: str) -> np.random.Generator:
    """Return the generator for ``label`` derived from ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(_label_key(label),))
    return np.random.default_rng(ss)


def child(rng: np.random.Generator, label: str) -> np.random.Generator:
    """Derive a labelled child stream from an existing generator.

    Consumes one 64-bit draw from ``rng``.
    """
    base = int(rng.integers(0, 2**63 - 1))
    return stream(base, label)
