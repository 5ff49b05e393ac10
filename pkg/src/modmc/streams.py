"""Deterministic per-chain random number streams.

Every concurrent unit of work (a constrained chain, a pilot chain, a
bootstrap replicate) owns an independent generator derived from the master
seed and a structural key.  Results are therefore bit-reproducible for a
fixed master seed no matter how work is scheduled across workers.
"""

from __future__ import annotations

import numpy as np

# Namespace tags keep different kinds of streams from colliding even when
# their structural coordinates (round, level, compartment, ...) coincide.
RUN = 0
PILOT = 1
BOOTSTRAP = 2
INIT = 3


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return the generator for the stream identified by ``key``.

    ``key`` is a tuple of small nonnegative integers, e.g.
    ``(RUN, round, level, compartment)``.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
