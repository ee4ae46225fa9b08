"""Thread pool helpers for time- and device-partitioned work.

Work is split into contiguous blocks and results come back in block
order, so every reduction downstream happens in a fixed order no matter
how many workers ran.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

R = TypeVar("R")


def blocks(n: int, parts: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into at most ``parts`` contiguous nonempty blocks."""
    parts = max(1, min(parts, n))
    base, extra = divmod(n, parts)
    out, start = [], 0
    for p in range(parts):
        stop = start + base + (1 if p < extra else 0)
        out.append((start, stop))
        start = stop
    return out


class WorkerPool:
    """Runs a function over index blocks, serially when ``workers == 1``."""

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._ex = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def map_blocks(self, fn: Callable[[int, int], R], n: int) -> list[R]:
        spans = blocks(n, self.workers)
        if self._ex is None or len(spans) == 1:
            return [fn(a, b) for a, b in spans]
        return list(self._ex.map(lambda ab: fn(*ab), spans))

    def map(self, fn: Callable[..., R], items: Sequence) -> list[R]:
        if self._ex is None:
            return [fn(it) for it in items]
        return list(self._ex.map(fn, items))

    def close(self) -> None:
        if self._ex is not None:
            self._ex.shutdown(wait=True)
            self._ex = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
