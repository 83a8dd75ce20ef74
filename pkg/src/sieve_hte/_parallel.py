import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def worker_count(requested=None):
    """Workers to use: ``requested`` capped by ``HTE_THREADS`` and the CPU count."""
    cap = os.cpu_count() or 1
    env = os.environ.get("HTE_THREADS")
    if env:
        cap = min(cap, max(1, int(env)))
    if requested is None:
        return cap
    return max(1, min(int(requested), cap))


def parallel_map(fn, items, workers=1):
    """Order-preserving map; results never depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(items) // (4 * workers))
        return list(pool.map(fn, items, chunksize=chunk))


def child_seed(seed, *path):
    """Counter-based stream derivation: the stream at ``path`` under ``seed``."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))


def child_rng(seed, *path):
    return np.random.default_rng(child_seed(seed, *path))


def child_int(seed, *path):
    return int(child_seed(seed, *path).generate_state(1, dtype=np.uint32)[0])
