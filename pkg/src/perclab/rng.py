"""Deterministic random streams for replicated experiments.

Every random quantity in the laboratory is drawn from a counter-based
Philox stream addressed by (seed, replica, purpose). Streams never share
state, so replicas can run in any order, on any number of workers, and
still produce bit-identical output. Edge-label streams and ghost-field
streams use disjoint purpose tags so the same (seed, replica) pair can
drive both without overlap.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. Arbitrary fixed constants; they land in the upper
# 64 bits of the 128-bit Philox key.
EDGE_STREAM = 0x1
GHOST_STREAM = 0x2
WALK_STREAM = 0x3

# Each replica owns a block of 2**40 native draws, far more than any
# single replica ever consumes.
_REPLICA_STRIDE = 1 << 40

_SEED_MASK = (1 << 64) - 1


def stream(seed: int, replica: int = 0, purpose: int = EDGE_STREAM) -> np.random.Generator:
    """Return the Generator for one (seed, replica, purpose) cell.

    The generator is a fresh Philox instance whose counter is advanced to
    the replica's private block, so draws depend only on the three
    arguments and on how many values have been taken from the returned
    generator.
    """
    replica = int(replica)  # Philox.advance rejects numpy integer scalars
    if replica < 0:
        raise ValueError("replica must be nonnegative")
    key = (int(purpose) << 64) | (int(seed) & _SEED_MASK)
    bg = np.random.Philox(key=key)
    if replica:
        bg.advance(replica * _REPLICA_STRIDE)
    return np.random.Generator(bg)


def uniforms(seed: int, replica: int, count: int, purpose: int = EDGE_STREAM) -> np.ndarray:
    """count i.i.d. uniforms in [0, 1) from the addressed stream."""
    return stream(seed, replica, purpose).random(count)
