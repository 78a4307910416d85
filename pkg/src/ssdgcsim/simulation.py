"""Composition of devices, queues, cache, flusher and workload on one engine."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ssdgcsim.cache import PageCache
from ssdgcsim.engine import Engine, EventKind, SimulationError
from ssdgcsim.flusher import Flusher
from ssdgcsim.mapping import ArrayLayout
from ssdgcsim.metrics import RunMetrics, SsdStats
from ssdgcsim.queues import (APP_READ, DIRECT, WRITEBACK, DualQueue, FlushRequest, IoRequest,
                             discard_stale)
from ssdgcsim.ssd import SsdConfig, SsdDevice
from ssdgcsim.workload import ClosedLoopDriver, OpGenerator, WorkloadSpec, zipf_sampler


@dataclass
class SimConfig:
    num_ssds: int = 1
    ssd: SsdConfig = field(default_factory=SsdConfig)
    occupancy: float = 0.6
    stripe_unit: int = 4096
    # cache
    cache_enabled: bool = True
    cache_pages: int = 0              # 0: cache_fraction of the footprint
    cache_fraction: float = 0.125
    set_size: int = 12
    gclock_cap: int = 8
    initial_hits: int = 1
    # queues
    high_capacity: int = 64
    low_capacity: int = 4096
    reserved_high_slots: int = 7
    discard_threshold: int = 6
    # flusher
    flusher_enabled: bool = True
    flush_threshold: int = 6
    flush_batch: int = 2
    global_cap_per_ssd: int = 2048
    # preconditioning / measurement
    precondition_passes: float = 1.5
    precondition_pattern: str = "workload"   # "uniform" or follow the workload
    desync: bool = True
    warmup_fraction: float = 0.1
    cache_warmup_ops: int = 0         # untimed ops replayed through the cache first
    sample_every: int = 256
    verify: bool = False
    check_every: int = 1000
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_ssds <= 0:
            raise ValueError("num_ssds must be positive")
        if not 0.0 < self.occupancy < 1.0:
            raise ValueError("occupancy must be in (0, 1)")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.cache_fraction <= 0:
            raise ValueError("cache_fraction must be positive")
        if self.cache_warmup_ops < 0:
            raise ValueError("cache_warmup_ops must be non-negative")

    @property
    def local_footprint(self) -> int:
        return max(1, int(self.occupancy * self.ssd.logical_pages))

    @property
    def footprint(self) -> int:
        return self.local_footprint * self.num_ssds

    def resolved_cache_pages(self) -> int:
        if self.cache_pages:
            return self.cache_pages
        n = int(self.cache_fraction * self.footprint)
        return max(self.set_size, n - n % self.set_size)


class AppOp:
    __slots__ = ("index", "remaining", "is_write", "issued_at")

    def __init__(self, index: int, remaining: int, is_write: bool, issued_at: int) -> None:
        self.index = index
        self.remaining = remaining
        self.is_write = is_write
        self.issued_at = issued_at


class ArraySimulation:
    """One deterministic run.

    >>> sim = ArraySimulation(SimConfig(...))  # doctest: +SKIP
    >>> metrics = sim.run()                    # doctest: +SKIP
    """

    def __init__(self, config: SimConfig) -> None:
        self.config = cfg = config
        n = cfg.num_ssds
        self.engine = Engine()
        ss = np.random.SeedSequence(cfg.seed)
        dev_seeds = ss.spawn(n)
        self.layout = ArrayLayout(n, cfg.ssd.logical_pages * n, cfg.ssd.page_size, cfg.stripe_unit)
        self.devices = [SsdDevice(cfg.ssd, seed=int(s.generate_state(1)[0]), index=i)
                        for i, s in enumerate(dev_seeds)]
        self._precondition(dev_seeds)
        self.queues = [DualQueue(i, cfg.high_capacity, cfg.low_capacity, cfg.ssd.max_outstanding,
                                 cfg.reserved_high_slots) for i in range(n)]
        self.stats = [SsdStats() for _ in range(n)]
        self.violations: Counter = Counter()
        self.checks = 0
        self._since_check = 0

        self.cache: Optional[PageCache] = None
        self.flusher: Optional[Flusher] = None
        if cfg.cache_enabled:
            self.cache = PageCache(cfg.resolved_cache_pages(), cfg.set_size, cfg.gclock_cap,
                                   cfg.initial_hits, backend=self, on_dirtied=self._on_dirtied,
                                   track_writes=cfg.verify)
            self.flusher = Flusher(self.cache, self._make_flush, self._enqueue_flush,
                                   self._flush_queue_full, threshold=cfg.flush_threshold,
                                   batch=cfg.flush_batch, global_cap=cfg.global_cap_per_ssd * n,
                                   discard_threshold=cfg.discard_threshold,
                                   enabled=cfg.flusher_enabled)
        self._acked_direct: dict[int, int] = {}
        self._next_direct_tag = 2
        self.read_divergences = 0

        spec = cfg.workload
        if spec.footprint_pages != cfg.footprint:
            from dataclasses import replace
            spec = replace(spec, footprint_pages=cfg.footprint)
        self.spec = spec
        if self.cache is not None and cfg.cache_warmup_ops:
            self._warm_cache(cfg.cache_warmup_ops)
        self.driver = ClosedLoopDriver(spec, n, self._issue_op)
        self.warmup_ops = int(cfg.warmup_fraction * spec.total_ops)
        self.t_warm: Optional[int] = 0 if self.warmup_ops == 0 else None
        self._warm_hits = (0, 0)
        self._window_end = (0, 0)   # (time, completions) at the last issue
        self.samples: list[tuple[int, int, int, int, int]] = []

        self._kick: deque[int] = deque()
        self._kicked = [False] * n
        eng = self.engine
        eng.register(EventKind.REQUEST_ARRIVAL, self._on_arrival)
        eng.register(EventKind.DEVICE_COMPLETION, self._on_device_done)
        eng.register(EventKind.GC_PHASE, self._on_gc_end)
        self._started = False

    # -------------------------------------------------------------- set-up

    def _precondition(self, seeds) -> None:
        cfg = self.config
        local = cfg.local_footprint
        sampler = None
        pattern = cfg.workload.pattern if cfg.precondition_pattern == "workload" else cfg.precondition_pattern
        if pattern == "zipfian":
            sampler = zipf_sampler(local, cfg.workload.zipf_exponent, seed=cfg.seed)
        span = int((cfg.ssd.gc_high_watermark - cfg.ssd.gc_low_watermark) * cfg.ssd.physical_pages)
        for dev, s in zip(self.devices, seeds):
            rng = np.random.default_rng(s)
            extra = int(rng.integers(0, max(1, span))) if cfg.desync else 0
            dev.precondition(local, cfg.precondition_passes, rng, sampler, extra)
            dev.host_writes = dev.host_reads = 0
            dev.gc_copies = dev.gc_erases = 0

    def _warm_cache(self, n_ops: int) -> None:
        """Replay ``n_ops`` untimed ops so the timed run starts with a full cache.

        The stream draws from the same address distribution as the workload
        but from its own generator. Misses and writebacks go straight to
        flash and the flusher stays off, so every arm of a comparison starts
        from the same cache contents.
        """
        cache = self.cache
        gen = OpGenerator(self.spec)
        gen.rng = np.random.default_rng([self.spec.seed, 0xCAC4E])
        lay = self.layout
        devices = self.devices

        class _Untimed:
            @staticmethod
            def read(page_id, callback):
                callback(devices[lay.ssd_of(page_id)].tags[lay.local_page(page_id)])

            @staticmethod
            def writeback(page_id, tag, callback):
                dev = devices[lay.ssd_of(page_id)]
                dev.write_page(lay.local_page(page_id), tag)
                dev.collect()
                callback()

        def noop() -> None:
            pass

        cache.backend = _Untimed
        fl_enabled, self.flusher.enabled = self.flusher.enabled, False
        for _ in range(n_ops):
            offset, size, is_write = gen.next_op()
            for sub in lay.split(offset, size):
                if is_write:
                    cache.write(sub.page, sub.partial, noop)
                else:
                    cache.read(sub.page, noop)
        cache.backend = self
        self.flusher.enabled = fl_enabled
        cache.hits = cache.misses = 0
        cache.dirty_evictions = cache.clean_evictions = 0
        for dev in devices:
            dev.host_writes = dev.host_reads = 0
            dev.gc_copies = dev.gc_erases = 0
        if fl_enabled:
            # sets already past the threshold join the FIFO; the pump runs at start
            for pset in cache.sets:
                if self.flusher._over(pset) and not pset.in_flush_fifo:
                    pset.in_flush_fifo = True
                    self.flusher.pending_sets.append(pset)

    # ---------------------------------------------------------- plumbing

    def kick(self, ssd: int) -> None:
        if not self._kicked[ssd]:
            self._kicked[ssd] = True
            self._kick.append(ssd)

    def _settle(self) -> None:
        kick = self._kick
        while kick:
            ssd = kick.popleft()
            self._kicked[ssd] = False
            self._dispatch(ssd)
        if self.config.verify:
            self._check_light()

    def _keep(self, req: FlushRequest) -> Optional[str]:
        return discard_stale(req, self.cache, self.config.discard_threshold)

    def _dispatch(self, ssd: int) -> None:
        q = self.queues[ssd]
        dev = self.devices[ssd]
        eng = self.engine
        now = eng.now
        verify = self.config.verify
        issued, dropped = q.dispatch(self._keep if self.cache is not None else None)
        st = self.stats[ssd]
        for req in issued:
            if req.low:
                page = req.page_obj
                if verify:
                    self.checks += 1
                    if q.high:
                        self.violations["priority"] += 1
                    if (self.cache.pages.get(req.page) is not page or not page.dirty
                            or page.dirty_version != req.version):
                        self.violations["discard_soundness"] += 1
                req.tag = page.tag
                st.writes_flush += 1
            elif req.is_write:
                if req.origin == WRITEBACK:
                    st.writes_writeback += 1
                else:
                    st.writes_direct += 1
            req.submit_time = now if req.low else req.submit_time
            done, data, gc = dev.submit(req.is_write, req.local_page, req.tag, now)
            req.data_tag = data
            if req.is_write:
                st.device_writes += 1
            else:
                st.device_reads += 1
            if gc is not None:
                if st.gc_first_start is None:
                    st.gc_first_start = gc[0]
                if gc[1] > gc[0]:
                    eng.at(gc[1], EventKind.GC_PHASE, ssd)
            eng.at(done, EventKind.DEVICE_COMPLETION, req)
        if verify:
            self.checks += 1
            if q.in_flight > q.max_outstanding or q.in_flight_low > q.low_slot_cap:
                self.violations["slot_cap"] += 1
            if q.high and (q.in_flight < q.max_outstanding or q.in_flight_high < q.reserved_high_slots):
                self.violations["reservation"] += 1
            if dev.in_flight > dev.config.max_outstanding:
                self.violations["device_slots"] += 1
        if dropped:
            for req, reason in dropped:
                self.flusher.on_flush_event(req, reason)
            self.kick(ssd)

    # cache backend
    def read(self, page_id: int, callback) -> None:
        lay = self.layout
        ssd = lay.ssd_of(page_id)
        req = IoRequest(ssd, page_id, lay.local_page(page_id), False, APP_READ, self.engine.now, callback)
        self.queues[ssd].submit_high(req)
        self.kick(ssd)

    def writeback(self, page_id: int, tag: int, callback) -> None:
        lay = self.layout
        ssd = lay.ssd_of(page_id)
        req = IoRequest(ssd, page_id, lay.local_page(page_id), True, WRITEBACK, self.engine.now,
                        callback, tag)
        self.queues[ssd].submit_high(req)
        self.kick(ssd)

    # flusher hooks
    def _on_dirtied(self, pset) -> None:
        self.flusher.on_page_dirtied(pset)

    def _make_flush(self, page, score) -> FlushRequest:
        lay = self.layout
        ssd = lay.ssd_of(page.page)
        return FlushRequest(ssd, page.page, lay.local_page(page.page), page, page.set_id,
                            page.dirty_version, score)

    def _enqueue_flush(self, req: FlushRequest) -> bool:
        ok = self.queues[req.ssd].enqueue_low(req)
        if ok:
            self.kick(req.ssd)
        return ok

    def _flush_queue_full(self, page) -> bool:
        return self.queues[self.layout.ssd_of(page.page)].low_full()

    # ---------------------------------------------------------- handlers

    def _issue_op(self, index: int, op) -> None:
        self.engine.at(self.engine.now, EventKind.REQUEST_ARRIVAL, (index, op))

    def _on_arrival(self, _kind, payload) -> None:
        index, (offset, size, is_write) = payload
        subs = self.layout.split(offset, size)
        app = AppOp(index, len(subs), is_write, self.engine.now)
        cache = self.cache
        for sub in subs:
            done = lambda app=app: self._sub_done(app)
            if cache is not None:
                if is_write:
                    cache.write(sub.page, sub.partial, done)
                else:
                    cache.read(sub.page, done)
            else:
                tag = 0
                if is_write:
                    tag = self._next_direct_tag
                    self._next_direct_tag += 1
                req = IoRequest(sub.ssd, sub.page, sub.local_page, is_write, DIRECT, self.engine.now,
                                app, tag)
                self.queues[sub.ssd].submit_high(req)
                self.kick(sub.ssd)

    def _sub_done(self, app: AppOp) -> None:
        app.remaining -= 1
        if app.remaining:
            return
        drv = self.driver
        now = self.engine.now
        if drv.on_complete(now):
            self._window_end = (now, drv.completed)
        if drv.completed == self.warmup_ops and self.t_warm is None:
            self.t_warm = now
            if self.cache is not None:
                self._warm_hits = (self.cache.hits, self.cache.misses)
        if drv.completed % self.config.sample_every == 0:
            for q in self.queues:
                self.samples.append((now, q.ssd, len(q.high) + len(q.parked), len(q.low), q.in_flight))

    def _on_device_done(self, _kind, req) -> None:
        ssd = req.ssd
        self.devices[ssd].complete()
        self.queues[ssd].complete(req)
        if req.low:
            self.flusher.on_flush_event(req, None)
        elif req.origin == APP_READ:
            if self.config.verify:
                self._check_fill(req)
            req.token(req.data_tag)
        elif req.origin == WRITEBACK:
            req.token()
        else:
            if req.is_write:
                if req.tag > self._acked_direct.get(req.page, 0):
                    self._acked_direct[req.page] = req.tag
            elif self.config.verify:
                self._check_fill(req)
            self._sub_done(req.token)
        self.kick(ssd)

    def _on_gc_end(self, _kind, ssd) -> None:
        self.devices[ssd].end_gc(self.engine.now)

    # -------------------------------------------------------- invariants

    def _expected_tag(self, page: int) -> int:
        acked = self.cache.acked if self.cache is not None else self._acked_direct
        return acked.get(page, 1 if self.layout.local_page(page) < self.config.local_footprint else 0)

    def _check_fill(self, req: IoRequest) -> None:
        self.checks += 1
        if self.cache is not None:
            if req.data_tag != self._expected_tag(req.page):
                self.read_divergences += 1
                self.violations["stale_read"] += 1

    def _check_light(self) -> None:
        fl = self.flusher
        if fl is not None:
            self.checks += 1
            if fl.outstanding > fl.global_cap:
                self.violations["flush_cap"] += 1
        self._since_check += 1
        if self._since_check >= self.config.check_every:
            self._since_check = 0
            self.check_full()

    def check_full(self) -> None:
        """Recount-based consistency checks; violations are tallied."""
        self.checks += 1
        try:
            if self.cache is not None:
                self.cache.check()
                self.flusher.check()
                if self.cache.clean_first_violations:
                    self.violations["clean_first"] = self.cache.clean_first_violations
            for q in self.queues:
                q.check()
        except AssertionError as exc:
            self.violations[f"structure: {exc}"] += 1

    def verify_data(self) -> int:
        """Compare device image + dirty cache against acknowledged writes."""
        divergences = 0
        lay = self.layout
        if self.cache is not None:
            acked = self.cache.acked or {}
            for page, tag in acked.items():
                cp = self.cache.pages.get(page)
                if cp is not None and cp.ready and cp.dirty:
                    current = cp.tag
                else:
                    current = self.devices[lay.ssd_of(page)].tags[lay.local_page(page)]
                    if cp is not None and cp.ready and cp.tag != current:
                        divergences += 1
                        continue
                if current != tag:
                    divergences += 1
        else:
            for page, tag in self._acked_direct.items():
                if self.devices[lay.ssd_of(page)].tags[lay.local_page(page)] != tag:
                    divergences += 1
        if divergences:
            self.violations["lost_update"] += divergences
        return divergences

    def sync(self) -> int:
        """Write every dirty cached page straight to flash (end-of-run fsync)."""
        if self.cache is None:
            return 0
        lay = self.layout
        n = 0
        for pset in self.cache.sets:
            for p in pset.slots:
                if p is not None and p.ready and p.dirty:
                    ssd = lay.ssd_of(p.page)
                    dev = self.devices[ssd]
                    dev.write_page(lay.local_page(p.page), p.tag)
                    dev.collect()
                    self.stats[ssd].writes_sync += 1
                    self.stats[ssd].device_writes += 1
                    self.cache.mark_clean(p.page, p.dirty_version)
                    n += 1
        return n

    # ---------------------------------------------------------------- run

    def run(self, until: Optional[int] = None) -> RunMetrics:
        if not self._started:
            self._started = True
            self.driver.start()
            if self.flusher is not None:
                self.flusher.pump()
            self._settle()
        self.engine.run(until, self._settle)
        drained = len(self.engine) == 0
        if self.config.verify:
            self.check_full()
            if drained:
                self.verify_data()
        if drained:
            self.sync()
            if self.config.verify and self.cache is not None:
                self.verify_data()
        return self.metrics()

    def metrics(self) -> RunMetrics:
        drv = self.driver
        m = RunMetrics()
        m.app_ops_submitted = drv.issued
        m.app_ops_completed = drv.completed
        m.app_ops_in_flight = drv.in_flight
        t_end, c_end = self._window_end
        if self.t_warm is not None and t_end > self.t_warm:
            m.window_ops = c_end - self.warmup_ops
            m.window_us = t_end - self.t_warm
        m.virtual_duration = self.engine.now
        m.events = self.engine.events_processed
        if self.cache is not None:
            h0, m0 = self._warm_hits
            m.cache_hits = self.cache.hits - h0
            m.cache_misses = self.cache.misses - m0
        if self.flusher is not None:
            fs = self.flusher.stats
            m.flush_issued = fs.issued
            m.flush_completed = fs.completed
            m.flush_in_flight = self.flusher.outstanding
            m.discarded = dict(fs.discarded)
        for st, dev in zip(self.stats, self.devices):
            st.gc_time = dev.gc_time
            st.gc_cycles = dev.gc_cycles
            st.busy_time = dev.service_time // dev.config.channels + dev.gc_time
        m.ssds = [SsdStats(**vars(s)) for s in self.stats]
        m.queue_samples = list(self.samples)
        spec = self.spec
        cfg = self.config
        m.spec_key = (cfg.num_ssds, cfg.occupancy, spec.pattern, spec.zipf_exponent, spec.read_fraction,
                      spec.op_size, spec.aligned, spec.issue_model, spec.outstanding(cfg.num_ssds),
                      spec.total_ops, spec.seed, cfg.seed, cfg.resolved_cache_pages() if cfg.cache_enabled else 0,
                      cfg.cache_warmup_ops)
        return m


def run_simulation(config: SimConfig, until: Optional[int] = None) -> RunMetrics:
    sim = ArraySimulation(config)
    metrics = sim.run(until)
    if config.verify and sim.violations:
        raise SimulationError(f"invariant violations: {dict(sim.violations)}")
    return metrics
