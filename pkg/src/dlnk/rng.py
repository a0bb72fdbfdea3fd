"""Counter-based, splittable random streams.

A stream is the pair ``(seed, stream_id)`` keying a Philox generator.
Monte Carlo work is cut into fixed-size chunks, each drawn from its own
child stream, so the numbers produced never depend on how many worker
threads consume the chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

_MASK64 = (1 << 64) - 1
DEFAULT_CHUNK = 50_000

_threads = 1


def set_threads(n: int) -> None:
    """Cap the number of worker threads used by chunked Monte Carlo."""
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) <= _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, k: int) -> "RngStream":
        ss = np.random.SeedSequence([self.seed, self.stream_id, int(k)])
        return RngStream(self.seed, int(ss.generate_state(1, np.uint64)[0]))

    def split(self, n: int) -> list["RngStream"]:
        return [self.child(i) for i in range(n)]


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    if isinstance(rng, np.random.Generator):
        return RngStream(int(rng.integers(0, _MASK64, dtype=np.uint64, endpoint=True)))
    raise TypeError(f"cannot build a stream from {type(rng).__name__}")


def chunk_sizes(n: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    full, rest = divmod(int(n), chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(
    fn: Callable[[int, np.random.Generator], object],
    n: int,
    rng,
    chunk: int = DEFAULT_CHUNK,
    threads: int | None = None,
) -> list:
    """Run ``fn(size, generator)`` over fixed chunks; results in chunk order."""
    stream = as_stream(rng)
    sizes = chunk_sizes(n, chunk)
    jobs = [(size, stream.child(i)) for i, size in enumerate(sizes)]
    workers = min(threads or _threads, len(jobs)) if jobs else 1
    if workers <= 1:
        return [fn(size, s.generator()) for size, s in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(job[0], job[1].generator()), jobs))


def concat_chunks(fn, n, rng, chunk: int = DEFAULT_CHUNK, threads=None) -> np.ndarray:
    parts = map_chunks(fn, n, rng, chunk=chunk, threads=threads)
    return np.concatenate(parts, axis=0)
