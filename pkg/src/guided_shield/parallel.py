"""Order-preserving process pool for independent verification and sampling jobs."""

from __future__ import annotations

import logging
import multiprocessing
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)


def parallel_map(
    func: Callable[[T], R],
    items: Iterable[T],
    workers: int = 1,
    chunksize: int = 1,
) -> list[R]:
    """Map `func` over `items`, returning results in input order.

    With `workers <= 1` (or fewer than two items) the map runs in-process.
    Otherwise `func` must be picklable (module-level function or `functools.partial`).
    """
    jobs = list(items)
    if workers <= 1 or len(jobs) < 2:
        return [func(job) for job in jobs]

    pool_size = min(workers, len(jobs))
    logger.debug("dispatching %d jobs to %d workers", len(jobs), pool_size)
    with multiprocessing.Pool(pool_size) as pool:
        return pool.map(func, jobs, chunksize=chunksize)
