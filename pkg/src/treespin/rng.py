"""Counter-based random streams.

Every random consumer takes a ``numpy.random.Generator``.  Streams for
parallel replicas are derived from ``(seed, replica)`` so results do not
depend on scheduling.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, replica: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, replica)``."""
    ss = np.random.SeedSequence([int(seed), int(replica)])
    return np.random.Generator(np.random.Philox(ss))


def streams(seed: int, count: int) -> list[np.random.Generator]:
    return [stream(seed, r) for r in range(count)]
