"""Thread-count setting shared by the modules.

Work is split into independent tasks whose results are collected in
submission order, so outputs do not depend on the number of threads.
"""

import os
from concurrent.futures import ThreadPoolExecutor

_threads = None


def set_threads(n):
    global _threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def get_threads():
    if _threads is not None:
        return _threads
    env = os.environ.get("DIFFEO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def pmap(fn, items):
    """Ordered map, run on a thread pool when more than one thread is allowed."""
    items = list(items)
    n = min(get_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
