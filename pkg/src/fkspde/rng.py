"""Deterministic seed derivation, chunked parallel execution, mergeable statistics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

DEFAULT_SEED = 20240607
# Paths per work unit. Results depend on this value, never on the worker count.
CHUNK = 8192


def derive_seed(master: int, *keys: int) -> int:
    """64-bit child seed for the counter tuple ``keys`` under ``master``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) seeded from a 64-bit integer."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def chunk_sizes(n: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(int(n), chunk)
    return [chunk] * full + ([rest] if rest else [])


def parallel_map(fn: Callable[[int], T], n_tasks: int, workers: int = 1) -> list[T]:
    """``[fn(i) for i in range(n_tasks)]`` evaluated on a thread pool, in order."""
    if workers <= 1 or n_tasks <= 1:
        return [fn(i) for i in range(n_tasks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_tasks)))


@dataclass(frozen=True)
class Moments:
    """Count, mean and centered sum of squares; merges associatively."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values: Iterable[float]) -> "Moments":
        v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
        if v.size == 0:
            return cls()
        mu = float(np.mean(v))
        return cls(int(v.size), mu, float(np.sum((v - mu) ** 2)))

    def merge(self, other: "Moments") -> "Moments":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Moments(n, mean, m2)

    @property
    def var(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    @property
    def se(self) -> float:
        return math.sqrt(self.var / self.n) if self.n > 1 else math.nan


def merge_all(parts: Sequence[Moments]) -> Moments:
    out = Moments()
    for p in parts:
        out = out.merge(p)
    return out


def median_of_means(values: np.ndarray, groups: int = 10) -> tuple[float, float]:
    """Median of group means and a spread-based error (1.2533 * sd(means)/sqrt(groups))."""
    v = np.asarray(values, dtype=float)
    groups = max(1, min(groups, v.size))
    means = np.array([g.mean() for g in np.array_split(v, groups)])
    med = float(np.median(means))
    err = 1.2533 * float(np.std(means, ddof=1)) / math.sqrt(groups) if groups > 1 else math.nan
    return med, err


def log_mean_jackknife(values: np.ndarray, groups: int = 20) -> tuple[float, float]:
    """log(mean) with a delete-one-group jackknife standard error."""
    v = np.asarray(values, dtype=float)
    groups = max(2, min(groups, v.size))
    parts = np.array_split(v, groups)
    sums = np.array([p.sum() for p in parts])
    counts = np.array([p.size for p in parts])
    total, n = sums.sum(), counts.sum()
    est = math.log(total / n)
    loo = np.log((total - sums) / (n - counts))
    se = math.sqrt((groups - 1) / groups * np.sum((loo - loo.mean()) ** 2))
    return est, se
