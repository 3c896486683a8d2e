"""Chunked execution over a thread pool.

Chunk boundaries depend only on the problem size and ``chunk``, never on the
number of threads, and every chunk draws its randomness from counter-based
streams.  The thread count therefore changes wall time only.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

T = TypeVar("T")

DEFAULT_CHUNK = 1 << 16

_threads = max(1, int(os.environ.get("STATTAIL_THREADS", "1")))


def set_default_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("thread count must be positive")
    _threads = int(n)


def default_threads() -> int:
    return _threads


def chunk_bounds(total: int, chunk: int = DEFAULT_CHUNK) -> List[tuple]:
    return [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]


def map_chunks(fn: Callable[[int, int], T], total: int, chunk: int = DEFAULT_CHUNK,
               threads: Optional[int] = None) -> List[T]:
    """Run ``fn(lo, hi)`` over consecutive index ranges; results in index order."""
    bounds = chunk_bounds(total, chunk)
    threads = _threads if threads is None else threads
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
