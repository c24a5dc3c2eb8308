"""Path-parallel map.

Every task is a pure function of its path id, so the degree of parallelism
never changes a result; outputs are returned in path-id order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "SLEBOUNDARY_WORKERS"


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def map_paths(fn, path_ids, workers: int | None = None) -> list:
    """``[fn(i) for i in sorted(path_ids)]``, possibly across processes."""
    ids = sorted(int(i) for i in path_ids)
    w = worker_count(workers)
    if w == 1 or len(ids) < 2 * w:
        return [fn(i) for i in ids]
    with ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, ids, chunksize=max(1, len(ids) // (8 * w))))
