"""Process-based map with deterministic ordering.

Worker count comes from SAFENAV_THREADS when set, else the CPU count.
Workers receive picklable tasks and results come back in submission
order, so parallel and serial execution produce identical outputs.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    env = os.environ.get("SAFENAV_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"SAFENAV_THREADS must be an integer, got {env!r}")
    return max(1, os.cpu_count() or 1)


def parallel_map(fn: Callable[[T], R], items: Iterable[T],
                 workers: int | None = None) -> list[R]:
    tasks: Sequence[T] = list(items)
    if workers is None:
        workers = worker_count()
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    import multiprocessing as mp
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)),
                             mp_context=ctx) as pool:
        return list(pool.map(fn, tasks))
