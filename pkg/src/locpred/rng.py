"""Deterministic random number generation.

Every random draw in this project (weight init, dataset generation, batch
shuffling) goes through a Philox4x64 counter-based generator keyed by
``(seed, stream)``.  Philox is stateless across streams, so independent
streams (one per sequence, per model, per epoch) can be derived without any
generator having to be advanced in a particular order.  This keying scheme
is part of the dataset format contract: the same seed must reproduce the
same bytes on any platform.
"""

from __future__ import annotations

import numpy as np


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a Generator for the given (seed, stream) key."""
    if seed < 0 or stream < 0:
        raise ValueError(f"seed and stream must be non-negative, got ({seed}, {stream})")
    return np.random.Generator(np.random.Philox(key=[seed, stream]))
