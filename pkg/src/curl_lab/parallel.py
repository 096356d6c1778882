"""Deterministic chunked random streams and an order-preserving worker map.

Work is cut into fixed-size chunks; chunk ``i`` draws from a Philox
(counter-based) generator keyed by ``(seed, i)``. Results are reduced in chunk
order, so output is bit-identical for any number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

CHUNK_SIZE = 8192
THREADS_ENV = "CURL_LAB_THREADS"

T = TypeVar("T")


def chunk_rng(seed: int, chunk: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(chunk)))
    return np.random.Generator(np.random.Philox(ss))


def chunk_bounds(n: int, size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(lo, min(n, lo + size)) for lo in range(0, n, size)]


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    return max(1, int(threads))


def ordered_map(fn: Callable[..., T], items: Sequence, threads: int | None = None) -> list[T]:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    n = resolve_threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
