"""Seed hierarchy: one root seed fans out into named per-component streams.

Every source of randomness in the package (scene generation, task sampling,
policy init, action sampling, probe sampling) draws from a stream derived
here, so a run is a pure function of (config, root seed).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream_seed", "stream", "SeedTree"]


def _fold(name: str) -> int:
    # Stable 8-byte digest of the stream name; never use Python's hash().
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def stream_seed(root: int, name: str) -> int:
    """Derive a child seed for the named component, stable across runs."""
    seq = np.random.SeedSequence([int(root) & 0xFFFFFFFFFFFFFFFF, _fold(name)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def stream(root: int, name: str) -> np.random.Generator:
    """A fresh Generator for the named component under the root seed."""
    return np.random.default_rng(stream_seed(root, name))


class SeedTree:
    """Convenience wrapper: tree.child("rollout").rng("worker-3")."""

    def __init__(self, root: int, path: str = ""):
        self.root = int(root)
        self.path = path

    def child(self, name: str) -> "SeedTree":
        joined = f"{self.path}/{name}" if self.path else name
        return SeedTree(self.root, joined)

    def seed(self, name: str = "") -> int:
        joined = f"{self.path}/{name}" if name else (self.path or "root")
        return stream_seed(self.root, joined)

    def rng(self, name: str = "") -> np.random.Generator:
        return np.random.default_rng(self.seed(name))
