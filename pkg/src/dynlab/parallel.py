"""Thread pool helper with deterministic result order."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    value = os.environ.get("DYNLAB_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return os.cpu_count() or 1


def ordered_map(fn, items):
    """``[fn(x) for x in items]``, evaluated on a thread pool, results in input order."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
