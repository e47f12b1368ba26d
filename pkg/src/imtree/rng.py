"""Reproducible, splittable random streams for Monte Carlo work.

Every stochastic routine takes ``(seed, partitions)``.  The seed is expanded
with :class:`numpy.random.SeedSequence` into one independent PCG64 stream per
partition, and the work is split into contiguous chunks in a fixed order, so
a result depends only on ``(seed, partitions)`` and not on how many threads
actually execute the partitions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def spawn_generators(seed: int, partitions: int = 1) -> list[np.random.Generator]:
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    children = np.random.SeedSequence(seed).spawn(partitions)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


def split_counts(total: int, partitions: int) -> list[int]:
    base, extra = divmod(total, partitions)
    return [base + (1 if k < extra else 0) for k in range(partitions)]


def run_partitioned(
    fn: Callable[[np.random.Generator, int], T],
    total: int,
    seed: int,
    partitions: int = 1,
    threads: int | None = None,
) -> list[T]:
    """Call ``fn(rng, count)`` once per partition; results come back in partition order."""
    gens = spawn_generators(seed, partitions)
    counts = split_counts(total, partitions)
    jobs: Sequence[tuple[np.random.Generator, int]] = list(zip(gens, counts))
    workers = min(threads or partitions, partitions)
    if workers <= 1:
        return [fn(g, c) for g, c in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
