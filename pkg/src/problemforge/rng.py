"""Deterministic named random streams.

Every source of randomness in the library is a numpy Generator derived
from a root seed plus a tuple of stream keys (strings or ints).  The
derivation is pure: the same (seed, keys) always yields the same stream,
on every platform, regardless of how many other streams were drawn from.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["SeededRng", "make_generator", "stream_key"]


def stream_key(part) -> int:
    """Map a stream-key part (str or int) to a stable uint32."""
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big")
    raise TypeError(f"stream key parts must be str or int, got {type(part)!r}")


def make_generator(seed: int, *parts) -> np.random.Generator:
    """Create a Generator for the stream named by ``parts`` under ``seed``."""
    spawn = tuple(stream_key(p) for p in parts)
    seq = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=spawn)
    return np.random.Generator(np.random.PCG64(seq))


class SeededRng:
    """A named random stream: a root seed plus a stream-id tuple.

    Identical (seed, stream, call sequence) produce identical draws.  Use
    :meth:`child` to derive independent substreams; use :attr:`gen` to draw.
    """

    __slots__ = ("seed", "stream", "_gen")

    def __init__(self, seed: int, stream: tuple = ()):
        self.seed = int(seed)
        self.stream = tuple(stream)
        self._gen = None

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = make_generator(self.seed, *self.stream)
        return self._gen

    def child(self, *parts) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(parts))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream!r})"
