"""Counter-based seeded sampling split into fixed-size chunks.

Each chunk owns an independent Philox stream (key = seed, counter offset = chunk
index), and chunk results are merged in chunk order, so outputs depend only on
the seed and the sample count, never on the number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List

import numpy as np

CHUNK = 1 << 16


def worker_count(default: int | None = None) -> int:
    env = os.environ.get("ABC_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return default or min(8, os.cpu_count() or 1)


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    key = int(seed) % (1 << 128)
    return np.random.Generator(np.random.Philox(key=key, counter=int(chunk) << 192))


def run_chunked(total: int, seed: int, fn: Callable, workers: int | None = None,
                chunk: int = CHUNK) -> List:
    """Call ``fn(rng, size, index)`` for each chunk and return results in chunk order."""
    sizes = []
    left = int(total)
    while left > 0:
        sizes.append(min(chunk, left))
        left -= sizes[-1]
    jobs = [(i, s) for i, s in enumerate(sizes)]
    w = worker_count() if workers is None else max(1, workers)
    if w == 1 or len(jobs) <= 1:
        return [fn(chunk_rng(seed, i), s, i) for i, s in jobs]
    with ThreadPoolExecutor(max_workers=w) as ex:
        return list(ex.map(lambda js: fn(chunk_rng(seed, js[0]), js[1], js[0]), jobs))
