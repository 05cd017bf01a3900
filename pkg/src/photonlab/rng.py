"""Deterministic, splittable random-number streams.

Every stochastic stage of the simulator draws from its own named
sub-stream of a single 64-bit master seed, so results do not depend on
the order in which stages (or parallel blocks) are evaluated. Streams
are Philox counter-based generators keyed through ``SeedSequence`` with
an integer path ``(master_seed, stage, block, ...)``.
"""

from __future__ import annotations

import numpy as np

# Stage identifiers for sub-stream derivation. Values are part of the
# determinism contract: changing them changes every simulated stream.
STAGE_BLINK = 1
STAGE_EMIT = 2
STAGE_ROUTE = 3
STAGE_DETECTOR = 4
STAGE_RUN = 5


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, *path)."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *path: int) -> int:
    """A derived 64-bit seed, for handing a whole stage its own master."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
