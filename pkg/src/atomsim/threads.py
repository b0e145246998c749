"""Worker-pool plumbing shared by the force, solver, and KMC kernels.

All parallel phases follow the same pattern: an index range is split into one
contiguous chunk per worker, each chunk is processed by a nogil numba kernel,
and the caller joins the phase before reading results (the phase barrier).
Chunk boundaries depend only on (n_items, workers), so results are
reproducible for a fixed worker count.
"""

from concurrent.futures import ThreadPoolExecutor

_pools = {}


def chunk_ranges(n_items, parts):
    """Split range(n_items) into ``parts`` near-even contiguous (lo, hi) ranges."""
    base, extra = divmod(n_items, parts)
    ranges = []
    lo = 0
    for w in range(parts):
        hi = lo + base + (1 if w < extra else 0)
        ranges.append((lo, hi))
        lo = hi
    return ranges


def get_pool(workers):
    pool = _pools.get(workers)
    if pool is None:
        pool = ThreadPoolExecutor(max_workers=workers)
        _pools[workers] = pool
    return pool


def run_chunked(fn, n_items, workers):
    """Run ``fn(lo, hi, worker_index)`` over chunks of range(n_items).

    With one worker the call is inline (no pool); otherwise each chunk runs on
    the shared pool and this call blocks until every chunk finishes.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if n_items == 0:
        return
    if workers == 1:
        fn(0, n_items, 0)
        return
    ranges = chunk_ranges(n_items, workers)
    pool = get_pool(workers)
    futures = [
        pool.submit(fn, lo, hi, w) for w, (lo, hi) in enumerate(ranges) if hi > lo
    ]
    for fut in futures:
        fut.result()
