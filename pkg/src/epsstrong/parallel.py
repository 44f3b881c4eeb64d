"""Path-indexed worker pool.

Each path ``i`` gets ``RngStream(seed, i)``, so the output is the same for any
number of workers. Heavy kernels release the GIL, which is what makes threads
worthwhile here.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from .rng import RngStream


def map_paths(fn, seed: int, n_paths: int, threads: int = 1, start: int = 0, block: int = 64):
    """Return ``[fn(RngStream(seed, i), i) for i in range(start, start + n_paths)]``."""
    if n_paths < 0:
        raise ValueError("n_paths must be >= 0")
    threads = max(1, int(threads))
    indices = range(start, start + n_paths)
    if threads == 1 or n_paths <= block:
        return [fn(RngStream(seed, i), i) for i in indices]

    def run_block(lo):
        return [fn(RngStream(seed, i), i) for i in range(lo, min(lo + block, start + n_paths))]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        out = []
        for part in pool.map(run_block, range(start, start + n_paths, block)):
            out.extend(part)
    return out
