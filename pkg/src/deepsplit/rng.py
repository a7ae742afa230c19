"""Hierarchical, counter-based random streams.

A :class:`Stream` is a 64-bit key. Children are derived deterministically
from a parent key and a label (an integer or a string), so every consumer
(path ``j`` of gradient step ``m`` of time step ``n`` of run ``r``) owns a
stream that does not depend on how the work is scheduled.
"""
from __future__ import annotations

import hashlib

import numpy as np

from . import kernels

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _label_id(label: int | str) -> int:
    if isinstance(label, str):
        return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")
    if isinstance(label, (int, np.integer)) and label >= 0:
        return int(label)
    raise ValueError(f"stream labels must be non-negative ints or strings, got {label!r}")


def derive(key: int, label: int | str) -> int:
    """Child key; matches ``kernels.derive_keys`` for integer labels."""
    return mix64(mix64(key + _GOLDEN) ^ _label_id(label))


class Stream:
    """Immutable node in the stream hierarchy."""

    __slots__ = ("key",)

    def __init__(self, seed: int):
        if isinstance(seed, Stream):
            seed = seed.key
        self.key = int(seed) & _MASK

    def child(self, *labels: int | str) -> "Stream":
        key = self.key
        for label in labels:
            key = derive(key, label)
        return Stream(key)

    def path_keys(self, count: int, offset: int = 0) -> np.ndarray:
        """Per-path keys ``child(offset + j).key`` as a uint64 array."""
        return kernels.derive_keys(self.key, count, offset)

    def generator(self) -> np.random.Generator:
        """A numpy generator seeded from this key, for non-hot consumers."""
        return np.random.default_rng(self.key)

    def __eq__(self, other):
        return isinstance(other, Stream) and other.key == self.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"Stream(0x{self.key:016x})"
