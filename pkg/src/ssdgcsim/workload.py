"""Seeded application workloads: uniform / Zipfian page addresses, read-write
mixes, aligned 4 KB or unaligned small writes, closed-loop issue."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

PAGE = 4096


def zipf_sampler(n: int, exponent: float = 0.99, seed: int = 0) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Sampler over ``range(n)`` with P(rank k) proportional to k**-exponent.

    Ranks are scattered over the address space by a seeded permutation so the
    hottest pages do not sit next to each other (and hence do not share an SSD
    stripe or a cache set by construction).
    """
    if n <= 0:
        raise ValueError("zipf domain must be non-empty")
    weights = np.arange(1, n + 1, dtype=np.float64) ** -exponent
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    perm = np.random.default_rng([seed, 0x5EED]).permutation(n)

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        ranks = np.searchsorted(cdf, rng.random(size), side="right")
        np.minimum(ranks, n - 1, out=ranks)
        return perm[ranks]

    sample.cdf = cdf  # type: ignore[attr-defined]
    sample.perm = perm  # type: ignore[attr-defined]
    return sample


def uniform_sampler(n: int) -> Callable[[np.random.Generator, int], np.ndarray]:
    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.integers(0, n, size=size)

    return sample


@dataclass
class WorkloadSpec:
    pattern: str = "uniform"
    zipf_exponent: float = 0.99
    read_fraction: float = 0.0
    op_size: int = PAGE
    aligned: bool = True
    issue_model: str = "async"
    depth: int = 32          # async: outstanding ops per SSD
    threads: int = 32        # sync: logical issuers, one op each
    footprint_pages: int = 0
    total_ops: int = 10000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pattern not in ("uniform", "zipfian"):
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("read_fraction must be in [0, 1]")
        if self.issue_model not in ("sync", "async"):
            raise ValueError(f"unknown issue_model {self.issue_model!r}")
        if self.op_size <= 0:
            raise ValueError("op_size must be positive")
        if self.aligned and self.op_size % PAGE:
            raise ValueError("aligned ops must be a whole number of pages")
        if not self.aligned and self.op_size >= PAGE:
            raise ValueError("unaligned ops must fit inside one page")
        if self.depth <= 0 or self.threads <= 0:
            raise ValueError("depth and threads must be positive")

    def outstanding(self, num_ssds: int) -> int:
        return self.depth * num_ssds if self.issue_model == "async" else self.threads


class OpGenerator:
    """Deterministic stream of ``(offset, size, is_write)`` application ops."""

    CHUNK = 4096

    def __init__(self, spec: WorkloadSpec) -> None:
        if spec.footprint_pages <= 0:
            raise ValueError("workload footprint is empty")
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        span = spec.footprint_pages - (spec.op_size // PAGE - 1 if spec.aligned else 0)
        if span <= 0:
            raise ValueError("op_size larger than footprint")
        if spec.pattern == "zipfian":
            self._pages = zipf_sampler(span, spec.zipf_exponent, seed=spec.seed)
        else:
            self._pages = uniform_sampler(span)
        self._buf: list[tuple[int, int, bool]] = []
        self._pos = 0

    def _refill(self) -> None:
        spec = self.spec
        n = self.CHUNK
        pages = self._pages(self.rng, n)
        writes = self.rng.random(n) >= spec.read_fraction
        if spec.aligned:
            offsets = pages * PAGE
        else:
            # strictly inside the page and never page-aligned
            offsets = pages * PAGE + self.rng.integers(1, PAGE - spec.op_size + 1, size=n)
        size = spec.op_size
        self._buf = [(o, size, w) for o, w in zip(offsets.tolist(), writes.tolist())]
        self._pos = 0

    def next_op(self) -> tuple[int, int, bool]:
        if self._pos == len(self._buf):
            self._refill()
        op = self._buf[self._pos]
        self._pos += 1
        return op


class ClosedLoopDriver:
    """Keeps a fixed number of application ops outstanding.

    ``issue(op_index, op)`` is called for each new op; the owner calls
    :meth:`on_complete` when an op finishes, which refills the slot until
    ``total_ops`` have been issued.
    """

    def __init__(self, spec: WorkloadSpec, num_ssds: int, issue: Callable[[int, tuple[int, int, bool]], None]) -> None:
        self.spec = spec
        self.limit = spec.outstanding(num_ssds)
        self.gen = OpGenerator(spec)
        self.issue = issue
        self.issued = 0
        self.completed = 0
        self.max_seen = 0
        self.last_issue_time = 0

    @property
    def in_flight(self) -> int:
        return self.issued - self.completed

    def _issue_one(self) -> None:
        idx = self.issued
        self.issued += 1
        if self.in_flight > self.limit:
            raise AssertionError("outstanding-op bound exceeded")
        self.max_seen = max(self.max_seen, self.in_flight)
        self.issue(idx, self.gen.next_op())

    def start(self) -> None:
        for _ in range(min(self.limit, self.spec.total_ops)):
            self._issue_one()

    def on_complete(self, now: int) -> bool:
        """Record a completion; returns True if a replacement op was issued."""
        self.completed += 1
        if self.issued < self.spec.total_ops:
            self.last_issue_time = now
            self._issue_one()
            return True
        return False
