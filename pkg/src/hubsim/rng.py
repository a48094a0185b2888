"""Deterministic per-replicate random streams.

A stream seed is the 128-bit BLAKE2b digest of

    master_seed (8 bytes LE) | replicate (8 bytes LE) | purpose (utf-8)

keyed with the ASCII string ``hubsim-stream-v1``.  The seed is fed to
``numpy.random.SeedSequence`` and the stream is a ``PCG64`` generator.
Anything that records ``(master_seed, replicate, purpose)`` can rebuild the
exact stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

STREAM_KEY = b"hubsim-stream-v1"
GENERATOR_ID = "numpy.PCG64(SeedSequence(blake2b-128))"
U64 = (1 << 64) - 1


def stream_seed(master_seed: int, replicate: int, purpose: str) -> int:
    if not (0 <= master_seed <= U64 and 0 <= replicate <= U64):
        raise ValueError("master_seed and replicate must be unsigned 64-bit integers")
    h = hashlib.blake2b(digest_size=16, key=STREAM_KEY)
    h.update(master_seed.to_bytes(8, "little"))
    h.update(replicate.to_bytes(8, "little"))
    h.update(purpose.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class Stream:
    master_seed: int
    replicate: int
    purpose: str
    seed: int

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of the stream."""
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def uniforms(self, n: int) -> np.ndarray:
        """First ``n`` uniforms on [0, 1) of the stream (prefix-stable in ``n``)."""
        return self.generator().random(n)

    def child(self, label: str) -> "Stream":
        """Independent sub-stream ``"<purpose>/<label>"`` of the same replicate."""
        return derive_stream(self.master_seed, self.replicate, f"{self.purpose}/{label}")

    def provenance(self) -> dict:
        return {"master_seed": self.master_seed, "replicate": self.replicate,
                "purpose": self.purpose, "stream_seed": f"{self.seed:032x}",
                "generator": GENERATOR_ID}


def derive_stream(master_seed: int, replicate: int, purpose: str) -> Stream:
    return Stream(master_seed, replicate, purpose, stream_seed(master_seed, replicate, purpose))


def as_stream(seed, purpose: str, replicate: int = 0) -> Stream:
    """Accept a Stream (returned as is) or an integer master seed."""
    if isinstance(seed, Stream):
        return seed
    return derive_stream(int(seed or 0), replicate, purpose)


def as_generator(seed) -> np.random.Generator:
    """Accept a Stream, Generator, int or None and return a Generator."""
    if isinstance(seed, Stream):
        return seed.generator()
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
