"""Per-path random streams.

Every path draws its Brownian increments from a Philox counter-based
generator keyed by ``SeedSequence(seed, spawn_key=(path_id,))``.  The stream of
a path therefore depends only on ``(seed, path_id)``, never on scheduling.
"""

from __future__ import annotations

import numpy as np


def derive_stream(seed: int, path_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(int(path_id),))
    return np.random.Generator(np.random.Philox(ss))


def derive_tail_stream(seed: int, path_id: int) -> np.random.Generator:
    """Second stream of a path, for the continuation of killed points."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(int(path_id), 1))
    return np.random.Generator(np.random.Philox(ss))


def step_key(seed: int, path_id: int) -> np.ndarray:
    """Philox key for the per-step uniforms of a path."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(int(path_id), 2))
    return ss.generate_state(2, np.uint64)


def step_uniform(key: np.ndarray, step: int) -> float:
    """Uniform on (0, 1) attached to step ``step`` of a path.

    A pure function of (key, step), so a replay of the same steps sees the
    same values whatever happened before.
    """
    raw = np.random.Philox(key=key, counter=int(step)).random_raw()
    return ((int(raw) >> 11) + 0.5) * 2.0 ** -53
