"""Small shared helpers: canonical hashing and deterministic threaded maps."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence


def canonical_json(obj) -> str:
    """Stable JSON encoding used for fingerprints: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def thread_map(fn: Callable, items: Iterable, threads: int = 1) -> list:
    """Map ``fn`` over ``items``, optionally on a thread pool.

    Results come back in input order, so any reduction over the output is
    deterministic regardless of the thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def chunk_ranges(n: int, parts: int) -> list[range]:
    """Split range(n) into at most ``parts`` contiguous, near-equal ranges."""
    parts = max(1, min(parts, n)) if n else 1
    step, extra = divmod(n, parts)
    out, start = [], 0
    for i in range(parts):
        size = step + (1 if i < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out
