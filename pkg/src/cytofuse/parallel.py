"""Order-preserving parallel map over images.

CYTO_FUSE_THREADS caps the worker count (0 or unset = one per CPU).
Workers must be pure per item; callers merge results afterwards, so any
thread count yields bit-identical output.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def thread_count() -> int:
    raw = os.environ.get("CYTO_FUSE_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"CYTO_FUSE_THREADS must be an integer, got {raw!r}") from None
    if value < 0:
        raise ValueError(f"CYTO_FUSE_THREADS must be >= 0, got {value}")
    return value or (os.cpu_count() or 1)


def thread_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T]) -> list[R]:
    items = list(items)
    workers = min(thread_count(), max(len(items), 1))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
