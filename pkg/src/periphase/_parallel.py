"""Deterministic chunked parallelism for Monte Carlo drivers.

Replicate i always derives its noise from the substream (seed, i), so a
replicate's result never depends on scheduling; chunk results are
assembled in submission order.  Together this makes every driver's output
invariant to the worker count (PERIPHASE_WORKERS, default 1).
"""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "PERIPHASE_WORKERS"


def worker_count() -> int:
    try:
        n = int(os.environ.get(WORKERS_ENV, "1"))
    except ValueError:
        n = 1
    return max(1, n)


def chunk_ranges(total: int, width: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + width, total)) for lo in range(0, total, width)]


def chunk_map(fn, common: tuple, ranges: list[tuple[int, int]]) -> list:
    """Run fn(*common, lo, hi) over the ranges; parallel when requested.
    fn must be a module-level function with picklable arguments."""
    n = worker_count()
    if n <= 1 or len(ranges) <= 1:
        return [fn(*common, lo, hi) for lo, hi in ranges]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(n, len(ranges)), mp_context=ctx) as ex:
        futures = [ex.submit(fn, *common, lo, hi) for lo, hi in ranges]
        return [f.result() for f in futures]
