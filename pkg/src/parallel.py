"""
Chunked thread-pool map used by the per-frame pipelines.

Work is split into contiguous index ranges and results come back in range
order, so the output never depends on the thread count.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")

MIN_CHUNK = 4096


def resolve_threads(threads: int) -> int:
    """0 or a negative count means one thread per core."""
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def chunk_bounds(n: int, threads: int, boundaries=None) -> List[slice]:
    """Split range(n) into at most ``threads`` contiguous slices.

    ``boundaries`` (sorted indices) restricts where a slice may start, so a
    frame-sorted table can be split without cutting a frame in two.
    """
    threads = resolve_threads(threads)
    count = max(1, min(threads, n // MIN_CHUNK))
    cuts = np.linspace(0, n, count + 1).astype(np.int64)
    if boundaries is not None and len(boundaries):
        boundaries = np.asarray(boundaries)
        cuts[1:-1] = boundaries[np.minimum(np.searchsorted(boundaries, cuts[1:-1]), len(boundaries) - 1)]
    cuts = np.unique(np.clip(cuts, 0, n))
    return [slice(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:])] or [slice(0, n)]


def map_chunks(fn: Callable[[slice], T], n: int, threads: int = 0, boundaries=None) -> List[T]:
    """Apply ``fn`` to each chunk slice; results are returned in chunk order."""
    slices = chunk_bounds(n, threads, boundaries)
    if len(slices) == 1:
        return [fn(slices[0])]
    logger.debug(f"Processing {n} rows in {len(slices)} chunks")
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        return list(pool.map(fn, slices))
