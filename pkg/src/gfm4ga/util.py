"""Small shared helpers: thread-capped parallel map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "GFM4GA_THREADS"


def thread_count() -> int:
    """Worker cap from the GFM4GA_THREADS environment variable (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn, items):
    """Order-preserving map, threaded only when the env cap allows it.

    Intended for pure per-subgraph work (scoring, prediction); results are
    collected in input order, so output is schedule-independent.
    """
    items = list(items)
    workers = thread_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
