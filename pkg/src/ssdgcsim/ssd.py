"""Simulated flash device: page-mapped log-structured FTL with greedy GC.

Timing model
------------
The device owns ``channels`` identical service units. A request starts on
the earliest-free unit and holds it for its service time. When the number
of whole free erase blocks drops below ``gc_low_watermark`` the device
reclaims greedy victims until ``gc_high_watermark`` is restored; the total
relocation + erase cost is charged as one stall during which no unit
serves host requests.

FTL state is mutated at submit time, so the device image always reflects
submission order. Completion time is the only thing deferred.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, fields

import numpy as np

FREE = -1


@dataclass
class SsdConfig:
    page_size: int = 4096
    pages_per_block: int = 128
    physical_blocks: int = 256
    over_provision: float = 0.10
    read_service_us: int = 80
    write_service_us: int = 128
    erase_us: int = 820
    copy_page_us: int = 0
    max_outstanding: int = 32
    channels: int = 8
    gc_low_watermark: float = 0.02
    gc_high_watermark: float = 0.03
    # False keeps reclamation (space must come from somewhere) but makes it free.
    gc_enabled: bool = True
    # Relative amplitude of uniform service-time noise; 0 disables the rng.
    jitter: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.over_provision < 1.0:
            raise ValueError(f"over_provision must be in (0, 1), got {self.over_provision}")
        if not 0.0 <= self.gc_low_watermark < self.gc_high_watermark < 1.0:
            raise ValueError(
                "need 0 <= gc_low_watermark < gc_high_watermark < 1, got "
                f"{self.gc_low_watermark}, {self.gc_high_watermark}"
            )
        for name in ("pages_per_block", "physical_blocks", "max_outstanding", "channels", "page_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("read_service_us", "write_service_us", "erase_us", "copy_page_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.jitter < 0 or self.jitter >= 1:
            raise ValueError("jitter must be in [0, 1)")
        if self.logical_pages < self.pages_per_block:
            raise ValueError("device too small for its over-provisioning")

    @property
    def physical_pages(self) -> int:
        return self.physical_blocks * self.pages_per_block

    @property
    def logical_pages(self) -> int:
        return int(self.physical_blocks * self.pages_per_block * (1.0 - self.over_provision))

    @property
    def peak_write_iops(self) -> float:
        """Random-write ceiling with GC free: every unit busy writing."""
        return 1e6 * self.channels / self.write_service_us

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class SsdDevice:
    """One simulated SSD. Only the engine touches it; never shared."""

    def __init__(self, config: SsdConfig, seed: int = 0, index: int = 0) -> None:
        self.config = config
        self.index = index
        c = config
        ppb = c.pages_per_block
        self.ppb = ppb
        self.l2p = [FREE] * c.logical_pages
        self.p2l = [FREE] * c.physical_pages
        # Last written version tag per logical page; 0 = never written.
        self.tags = [0] * c.logical_pages
        self.valid_count = [0] * c.physical_blocks
        self.free_blocks: deque[int] = deque(range(1, c.physical_blocks))
        self.active_block = 0
        self.write_ptr = 0
        self.valid_total = 0

        self.rng = np.random.default_rng(seed)
        self._busy = [0] * c.channels
        self.gc_active = False
        self.gc_until = 0
        self.in_flight = 0

        self.host_reads = 0
        self.host_writes = 0
        self.gc_copies = 0
        self.gc_erases = 0
        self.gc_cycles = 0
        self.gc_time = 0
        self.service_time = 0
        self.gc_log: list[tuple[int, int]] = []

    # ------------------------------------------------------------------ FTL

    @property
    def free_pages(self) -> int:
        return len(self.free_blocks) * self.ppb + (self.ppb - self.write_ptr)

    @property
    def invalid_pages(self) -> int:
        return self.config.physical_pages - self.valid_total - self.free_pages

    def free_fraction(self) -> float:
        return len(self.free_blocks) / self.config.physical_blocks

    def _program(self, lpn: int) -> None:
        if self.write_ptr == self.ppb:
            if not self.free_blocks:
                raise RuntimeError(f"ssd{self.index}: out of free blocks")
            self.active_block = self.free_blocks.popleft()
            self.write_ptr = 0
        b = self.active_block
        ppn = b * self.ppb + self.write_ptr
        self.write_ptr += 1
        self.p2l[ppn] = lpn
        self.l2p[lpn] = ppn
        self.valid_count[b] += 1

    def write_page(self, lpn: int, tag: int) -> None:
        """Out-of-place update of one logical page (no timing)."""
        old = self.l2p[lpn]
        if old != FREE:
            self.p2l[old] = FREE
            self.valid_count[old // self.ppb] -= 1
        else:
            self.valid_total += 1
        self._program(lpn)
        self.tags[lpn] = tag

    def pick_victim(self) -> int | None:
        """Greedy: sealed block with the fewest valid pages (lowest id on ties)."""
        vc = self.valid_count
        ppb = self.ppb
        free = set(self.free_blocks)
        best = None
        best_v = ppb
        for b in range(self.config.physical_blocks):
            if b == self.active_block or b in free:
                continue
            v = vc[b]
            if v < best_v:
                best, best_v = b, v
                if v == 0:
                    break
        return best

    def reclaim_one(self) -> tuple[int, int] | None:
        """Relocate the victim's valid pages and erase it.

        Returns ``(victim, pages_copied)`` or None when no block would gain space.
        """
        victim = self.pick_victim()
        if victim is None:
            return None
        ppb = self.ppb
        base = victim * ppb
        copied = 0
        p2l = self.p2l
        for ppn in range(base, base + ppb):
            lpn = p2l[ppn]
            if lpn != FREE:
                p2l[ppn] = FREE
                self.valid_count[victim] -= 1
                self._program(lpn)
                copied += 1
        self.valid_count[victim] = 0
        self.free_blocks.append(victim)
        self.gc_copies += copied
        self.gc_erases += 1
        return victim, copied

    def collect(self) -> tuple[int, int]:
        """Run greedy GC if below the low watermark; returns (blocks, copies)."""
        c = self.config
        low = c.gc_low_watermark * c.physical_blocks
        if len(self.free_blocks) >= low:
            return 0, 0
        high = c.gc_high_watermark * c.physical_blocks
        blocks = copies = 0
        while len(self.free_blocks) < high:
            res = self.reclaim_one()
            if res is None:
                break
            blocks += 1
            copies += res[1]
        return blocks, copies

    # --------------------------------------------------------------- timing

    def maybe_run_gc(self, now: int) -> tuple[int, int] | None:
        """Reclaim space if needed and charge the stall; returns (start, end)."""
        blocks, copies = self.collect()
        if blocks == 0:
            return None
        c = self.config
        cost = blocks * c.erase_us + copies * c.copy_page_us if c.gc_enabled else 0
        start = max(now, max(self._busy))
        end = start + cost
        self._busy = [end] * c.channels
        self.gc_cycles += 1
        if cost:
            self.gc_active = True
            self.gc_until = end
            self.gc_time += cost
            self.gc_log.append((start, end))
        return start, end

    def end_gc(self, now: int) -> None:
        if now >= self.gc_until:
            self.gc_active = False

    def _service(self, base: int) -> int:
        if self.config.jitter:
            return max(1, int(round(base * (1.0 + self.config.jitter * (2.0 * self.rng.random() - 1.0)))))
        return base

    def submit(self, is_write: bool, lpn: int, tag: int, now: int) -> tuple[int, int, tuple[int, int] | None]:
        """Accept one page request.

        Returns ``(completion_time, data_tag, gc_window)``. For reads
        ``data_tag`` is the version on flash at submit time; for writes it
        echoes ``tag``. ``gc_window`` is set when this write started a GC stall.
        """
        c = self.config
        if self.in_flight >= c.max_outstanding:
            raise RuntimeError(
                f"ssd{self.index}: submit with {self.in_flight} requests outstanding "
                f"(max {c.max_outstanding})"
            )
        gc = None
        if is_write:
            self.write_page(lpn, tag)
            self.host_writes += 1
            gc = self.maybe_run_gc(now)
            service = self._service(c.write_service_us)
            data = tag
        else:
            self.host_reads += 1
            service = self._service(c.read_service_us)
            data = self.tags[lpn]
        busy = self._busy
        ch = min(range(len(busy)), key=busy.__getitem__)
        done = max(now, busy[ch]) + service
        busy[ch] = done
        self.service_time += service
        self.in_flight += 1
        return done, data, gc

    def complete(self) -> None:
        self.in_flight -= 1

    # ------------------------------------------------------ preconditioning

    def precondition(self, footprint: int, passes: float, rng: np.random.Generator,
                     sampler=None, extra: int = 0) -> None:
        """Fill ``footprint`` logical pages sequentially, then overwrite randomly.

        ``passes`` is the number of random overwrites in multiples of the
        footprint; ``extra`` adds that many more so devices sharing a config
        sit at different points of their GC cycle. ``sampler(rng, n)`` draws
        local page numbers (uniform when omitted). Tags are set to 1 so the
        data-integrity oracle treats preconditioned content as version 1.
        """
        if footprint > self.config.logical_pages:
            raise ValueError("footprint exceeds logical capacity")
        for lpn in range(footprint):
            self.write_page(lpn, 1)
            self.collect()
        n = int(passes * footprint) + extra
        if sampler is None:
            draws = rng.integers(0, footprint, size=n)
        else:
            draws = sampler(rng, n)
        for lpn in draws.tolist():
            self.write_page(lpn, 1)
            self.collect()

    def check(self) -> None:
        """Assert FTL bookkeeping against a recount (debug/test aid)."""
        ppb = self.ppb
        recount = [0] * self.config.physical_blocks
        valid = 0
        for ppn, lpn in enumerate(self.p2l):
            if lpn != FREE:
                assert self.l2p[lpn] == ppn, f"p2l/l2p disagree at ppn {ppn}"
                recount[ppn // ppb] += 1
                valid += 1
        assert recount == self.valid_count, "valid_count drift"
        assert valid == self.valid_total
        mapped = sum(1 for p in self.l2p if p != FREE)
        assert mapped == valid
        assert self.valid_total + self.invalid_pages + self.free_pages == self.config.physical_pages
        assert self.in_flight <= self.config.max_outstanding


def _closed_loop_writes(dev: SsdDevice, draws: list[int], depth: int, warmup: int) -> float:
    """Keep ``depth`` writes outstanding; returns IOPS after ``warmup`` completions."""
    heap: list[tuple[int, int]] = []
    seq = 0
    it = iter(draws)
    now = 0
    for _ in range(min(depth, len(draws))):
        lpn = next(it)
        done, _, _ = dev.submit(True, lpn, 1, now)
        heapq.heappush(heap, (done, seq))
        seq += 1
    completed = 0
    t_warm = None
    t_last_issue = 0
    counted = 0
    for lpn in it:
        now, _ = heapq.heappop(heap)
        dev.complete()
        completed += 1
        if completed == warmup:
            t_warm = now
        elif t_warm is not None:
            counted += 1
        t_last_issue = now
        done, _, _ = dev.submit(True, lpn, 1, now)
        heapq.heappush(heap, (done, seq))
        seq += 1
    if t_warm is None or t_last_issue <= t_warm:
        raise ValueError("too few operations to measure throughput")
    return counted * 1e6 / (t_last_issue - t_warm)


def steady_state_iops(occupancy: float, config: SsdConfig | None = None, *,
                      pattern: str = "uniform", zipf_exponent: float = 0.99,
                      ops: int | None = None, passes: float = 1.5, seed: int = 0) -> float:
    """Saturated random-write IOPS of a single device at a logical occupancy.

    The device is filled to ``occupancy`` of its logical capacity, aged with
    random overwrites, then driven at ``max_outstanding`` depth.
    """
    if not 0.0 < occupancy < 1.0:
        raise ValueError(f"occupancy must be in (0, 1), got {occupancy}")
    from ssdgcsim.workload import zipf_sampler

    config = config or SsdConfig()
    footprint = max(1, int(occupancy * config.logical_pages))
    rng = np.random.default_rng(seed)
    sampler = None
    if pattern == "zipfian":
        sampler = zipf_sampler(footprint, zipf_exponent, seed=seed)
    elif pattern != "uniform":
        raise ValueError(f"unknown pattern {pattern!r}")
    dev = SsdDevice(config, seed=seed)
    dev.precondition(footprint, passes, rng, sampler)
    if ops is None:
        ops = max(20000, 2 * footprint)
    draws = (sampler(rng, ops) if sampler else rng.integers(0, footprint, size=ops)).tolist()
    return _closed_loop_writes(dev, draws, config.max_outstanding, warmup=ops // 10)


def independent_ceiling(num_ssds: int, occupancy: float, config: SsdConfig | None = None,
                        **kwargs) -> float:
    """Array throughput if every SSD ran flat out on its own stream."""
    return sum(steady_state_iops(occupancy, config, seed=kwargs.pop("seed", 0) + i, **kwargs)
               for i in range(num_ssds))


def calibrate(targets: dict[float, float], config: SsdConfig | None = None, *,
              copy_grid=None, erase_grid=None, ops: int = 20000, seed: int = 0):
    """Grid-search ``(copy_page_us, erase_us)`` to match normalized IOPS ratios.

    ``targets`` maps occupancy to IOPS / peak. Minimizes the worst relative
    error; returns ``(best_config, worst_rel_error, ratios)``.
    """
    from dataclasses import replace

    base = config or SsdConfig()
    copy_grid = copy_grid if copy_grid is not None else [0, 2, 4, 8, 12, 16]
    erase_grid = erase_grid if erase_grid is not None else [250, 500, 1000, 1500, 2000, 3000]
    best = None
    for copy_us in copy_grid:
        for erase_us in erase_grid:
            cfg = replace(base, copy_page_us=copy_us, erase_us=erase_us)
            peak = cfg.peak_write_iops
            ratios = {occ: steady_state_iops(occ, cfg, ops=ops, seed=seed) / peak for occ in targets}
            err = max(abs(ratios[o] - t) / t for o, t in targets.items())
            if best is None or err < best[1]:
                best = (cfg, err, ratios)
    assert best is not None
    if not math.isfinite(best[1]):
        raise RuntimeError("calibration failed")
    return best
