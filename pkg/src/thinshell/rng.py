"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream, substream...)``.  Work is cut into fixed-size chunks, each
chunk owning its own key, so results never depend on how chunks are
scheduled across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

CHUNK = 1 << 15

_threads = 1


def set_threads(count: int) -> None:
    """Set the worker count used by :func:`pmap`. Never changes results."""
    global _threads
    if count < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(count)


def get_threads() -> int:
    return _threads


def generator(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the stream ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Stream:
    seed: int
    index: int = 0

    def generator(self, *sub: int) -> np.random.Generator:
        return generator(self.seed, self.index, *sub)

    def child(self, offset: int) -> "Stream":
        return Stream(self.seed, self.index + offset)


def as_stream(stream: "Stream | int | None", seed: int | None = None) -> Stream:
    if isinstance(stream, Stream):
        return stream
    return Stream(0 if seed is None else int(seed), 0 if stream is None else int(stream))


def pmap(fn: Callable[[T], R], items: Sequence[T] | Iterable[T]) -> list[R]:
    items = list(items)
    if _threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, items))


def chunked_draw(
    draw: Callable[[np.random.Generator, int], np.ndarray],
    count: int,
    stream: Stream,
    chunk: int = CHUNK,
) -> np.ndarray:
    """Concatenate ``draw(gen, size)`` over fixed chunks keyed by chunk index."""
    sizes = [min(chunk, count - start) for start in range(0, count, chunk)]
    parts = pmap(lambda job: draw(stream.generator(job[0]), job[1]), list(enumerate(sizes)))
    return np.concatenate(parts, axis=0)
