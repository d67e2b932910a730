"""Deterministic random-stream derivation.

One 64-bit master seed per experiment; every task (rollout, state-action
pair, learning trajectory, sweep cell) gets its own counter-based Philox
stream keyed by (seed, purpose<<32 | index). Streams are independent and
platform-stable, so any execution order or degree of parallelism yields
identical results.
"""

import numpy as np

from .errors import ValidationError

PURPOSE_LEARN = 1
PURPOSE_ROLLOUT = 2
PURPOSE_PAIR = 3
PURPOSE_CELL = 4
PURPOSE_WCHECK = 5
PURPOSE_REFERENCE = 6

_MAX_INDEX = 2**32


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Return the Philox stream for (seed, purpose, index)."""
    if not 0 <= index < _MAX_INDEX:
        raise ValidationError(f"stream index out of range: {index}")
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    key = np.array([seed, (purpose << 32) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, purpose: int, index: int = 0) -> int:
    """Derive a fresh 64-bit master seed for a child task (e.g. a sweep cell)."""
    g = stream(seed, purpose, index)
    return int(g.integers(0, 2**64, dtype=np.uint64))
