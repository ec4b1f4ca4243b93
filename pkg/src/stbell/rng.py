"""Counter-based randomness: every round owns a fixed block of uniforms.

Round ``j`` of stream ``(seed, stream_id)`` always sees the same
``DRAWS_PER_ROUND`` uniforms no matter how the rounds are chunked or which
worker produces them, which is what makes parallel runs bit-identical.
"""
from __future__ import annotations

import secrets
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DRAWS_PER_ROUND = 8
# column layout of a round's uniform block
EVE_ATTACK, EVE_BASIS, ALICE_CHOICE, ALICE_OUTCOME, BOB_UNITARY, BOB_CHOICE, BOB_OUTCOME, SIFT = range(8)

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _SEED_MASK:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not 0 <= self.stream_id <= _SEED_MASK:
            raise ConfigError(f"stream_id must be a 64-bit unsigned integer, got {self.stream_id!r}")

    @classmethod
    def fresh(cls, stream_id: int = 0) -> RngSpec:
        return cls(secrets.randbits(63), stream_id)

    def substream(self, stream_id: int) -> RngSpec:
        return RngSpec(self.seed, stream_id)


def round_uniforms(spec: RngSpec, start: int, count: int) -> np.ndarray:
    """Uniforms in [0, 1) for rounds ``start .. start+count-1``, shape ``(count, 8)``."""
    if start < 0 or count < 0:
        raise ConfigError("round range must be non-negative")
    bg = np.random.Philox(key=(spec.stream_id << 64) | spec.seed)
    # Philox emits 4 words per counter step; 8 draws per round = 2 steps
    bg.advance(start * DRAWS_PER_ROUND // 4)
    return np.random.Generator(bg).random((count, DRAWS_PER_ROUND))
