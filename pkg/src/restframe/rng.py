"""Deterministic named random streams.

Every random draw in the library flows from one 64-bit seed.  A stream is
identified by a name ("mc", "metropolis", "juttner", ...) and an optional
chunk index; the pair is folded into the spawn key of a
:class:`numpy.random.SeedSequence`, and the bits come from the
counter-based Philox generator.  Work split into chunks therefore gives
the same numbers no matter how many threads process the chunks.
"""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

STREAMS = {"mc": 0, "metropolis": 1, "juttner": 2}

T = TypeVar("T")


def _stream_id(name: str) -> int:
    if name in STREAMS:
        return STREAMS[name]
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return 1000 + int.from_bytes(digest[:4], "little")


def generator(seed: int, stream: str = "mc", chunk: int = 0) -> np.random.Generator:
    """Return the generator for ``(seed, stream, chunk)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(_stream_id(stream), int(chunk)))
    return np.random.Generator(np.random.Philox(ss))


def default_threads() -> int:
    env = os.environ.get("WIGNER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def chunk_sizes(n: int, chunk: int) -> list[int]:
    """Split ``n`` into pieces of at most ``chunk`` (the last one shorter)."""
    n = int(n)
    chunk = max(1, int(chunk))
    sizes = [chunk] * (n // chunk)
    if n % chunk:
        sizes.append(n % chunk)
    return sizes


def map_chunks(func: Callable[[int, int], T], sizes: Sequence[int], threads: int | None = None) -> list[T]:
    """Apply ``func(chunk_index, size)`` to every chunk, results in chunk order."""
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(sizes) <= 1:
        return [func(k, s) for k, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(func, k, s) for k, s in enumerate(sizes)]
        return [f.result() for f in futures]
