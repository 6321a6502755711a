"""Seeded, replayable random streams.

Every sampling operation in the package takes an explicit stream owned by
the caller. A ``SeedStream`` wraps a counter-based numpy Philox generator
together with the seed material that created it, so noisy releases can
record enough information for exact replay. Setting the environment
variable ``DP_RESIDUAL_PRODUCTION=1`` suppresses seed recording (fresh
entropy must not be persisted alongside a privatized release).
"""

from __future__ import annotations

import os

import numpy as np


PRODUCTION_ENV_VAR = "DP_RESIDUAL_PRODUCTION"


def production_mode() -> bool:
    """True when seed recording is disabled via the environment."""
    return os.environ.get(PRODUCTION_ENV_VAR, "") == "1"


class SeedStream:
    """A seeded random stream with a replayable seed record.

    Parameters
    ----------
    seed : int or None
        Root entropy. ``None`` draws fresh OS entropy (non-replayable).
    """

    def __init__(self, seed: int | None = None, *, _seq: np.random.SeedSequence | None = None):
        self._seq = _seq if _seq is not None else np.random.SeedSequence(seed)
        self.generator = np.random.Generator(np.random.Philox(self._seq))

    @property
    def seed_record(self) -> dict | None:
        """Seed material for replay, or None in production mode."""
        if production_mode():
            return None
        entropy = self._seq.entropy
        return {
            "entropy": int(entropy) if entropy is not None else None,
            "spawn_key": [int(k) for k in self._seq.spawn_key],
        }

    def spawn(self, n: int) -> list["SeedStream"]:
        """Derive ``n`` independent child streams deterministically."""
        return [SeedStream(_seq=child) for child in self._seq.spawn(n)]

    def __repr__(self) -> str:  # pragma: no cover
        return f"SeedStream(record={self.seed_record})"


def as_generator(rng) -> np.random.Generator:
    """Accept a SeedStream, numpy Generator, or int seed; return a Generator."""
    if isinstance(rng, SeedStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return SeedStream(int(rng)).generator
    raise TypeError(f"rng must be a SeedStream, numpy Generator, or int seed, got {type(rng)!r}")


def seed_record_of(rng) -> dict | None:
    """Seed record of ``rng`` if it carries one (and not in production mode)."""
    if isinstance(rng, SeedStream):
        return rng.seed_record
    return None
