"""Per-path random streams.

Path ``i`` of a run owns the seed ``seed0 + i``. Its Gaussian increments come
from ``Generator(PCG64(SeedSequence(seed)))`` and its jump schedule from an
independent child stream spawned from the same sequence. Because each path
consumes only its own stream, results do not depend on how paths are
batched or split across workers.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DomainError

WORKERS_ENV = "HOLDERSEL_WORKERS"


def check_seed(seed) -> int:
    """Return ``seed`` as a non-negative int or raise :class:`DomainError`."""
    if isinstance(seed, (bool, np.bool_)) or seed is None:
        raise DomainError(f"seed must be a non-negative integer, got {seed!r}")
    try:
        s = int(seed)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"seed must be a non-negative integer, got {seed!r}") from exc
    if s != seed or s < 0:
        raise DomainError(f"seed must be a non-negative integer, got {seed!r}")
    return s


def seed_range(seed0, n: int) -> np.ndarray:
    """Seeds ``seed0, ..., seed0 + n - 1`` as an int64 array."""
    s = check_seed(seed0)
    if n < 0:
        raise DomainError("number of paths must be non-negative")
    return np.arange(s, s + n, dtype=np.int64)


def path_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Gaussian and jump generators for one path."""
    ss = np.random.SeedSequence(int(seed))
    jump_ss = ss.spawn(1)[0]
    return np.random.Generator(np.random.PCG64(ss)), np.random.Generator(np.random.PCG64(jump_ss))


class NormalBuffer:
    """Block-buffered standard normals, one independent stream per path.

    Each call to :meth:`next` returns one row of ``q`` normals for every
    requested path. Paths are advanced in lockstep, so a single block
    pointer suffices; refills only touch paths still in use.

    Parameters
    ----------
    seeds : array_like of int
    q : int
        Normals consumed per path per step.
    block : int, optional
        Rows drawn per refill. Does not affect the values returned.
    max_bytes : int
        Cap on the buffer size, used to shrink ``block`` for large batches.
    """

    def __init__(self, seeds, q: int, block: int = 1024, max_bytes: int = 256 * 2**20):
        self.seeds = np.asarray(seeds, dtype=np.int64)
        self.q = int(q)
        n = max(1, self.seeds.size)
        self.block = int(max(8, min(block, max_bytes // (8 * n * max(1, self.q)))))
        self._gens = [path_streams(s)[0] for s in self.seeds]
        self._buf = np.empty((self.seeds.size, self.block, self.q))
        self._pos = self.block

    def next(self, ids: np.ndarray | None) -> np.ndarray:
        """Next row of normals for paths ``ids`` (``None`` means all)."""
        if self._pos == self.block:
            for i in range(self.seeds.size) if ids is None else ids:
                self._buf[i] = self._gens[i].standard_normal((self.block, self.q))
            self._pos = 0
        out = self._buf[:, self._pos] if ids is None else self._buf[ids, self._pos]
        self._pos += 1
        return out


def worker_count(requested: int | None = None) -> int:
    """Worker processes to use: explicit request, else the env var, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise DomainError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
    return 1
