"""Ordered parallel map with a fixed numerical path.

Work is always split into the same chunks and BLAS is pinned to one thread,
so results do not depend on how many workers run the chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

CHUNK_SIZE = 16


def chunks(n_items: int, size: int = CHUNK_SIZE) -> list[range]:
    return [range(lo, min(lo + size, n_items)) for lo in range(0, n_items, size)]


@contextmanager
def single_threaded_blas():
    # entered once around whole runs; the limiter itself is not cheap
    with threadpool_limits(limits=1, user_api="blas"):
        yield


@contextmanager
def worker_pool(workers: int = 1):
    """Pool for :func:`map_ordered`, or ``None`` for serial execution; BLAS pinned either way."""
    with single_threaded_blas():
        if workers <= 1:
            yield None
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                yield pool


def map_ordered(fn, items, pool=None) -> list:
    """``[fn(x) for x in items]``, on ``pool`` if given; output keeps input order."""
    if pool is None:
        return [fn(x) for x in items]
    return list(pool.map(fn, items))
