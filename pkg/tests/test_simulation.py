from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdgcsim.engine import EventKind, SimulationError
from ssdgcsim.metrics import as_dict
from ssdgcsim.simulation import ArraySimulation, SimConfig, run_simulation
from ssdgcsim.ssd import SsdConfig
from ssdgcsim.workload import WorkloadSpec

SMALL_SSD = SsdConfig(pages_per_block=32, physical_blocks=64, gc_low_watermark=0.05,
                      gc_high_watermark=0.1)


def small(**kw) -> SimConfig:
    wl = kw.pop("workload", WorkloadSpec(total_ops=3000))
    base = dict(num_ssds=2, ssd=SMALL_SSD, occupancy=0.7, cache_fraction=0.1, workload=wl,
                precondition_passes=1.2, verify=True, check_every=200)
    base.update(kw)
    return SimConfig(**base)


@st.composite
def workloads(draw, allow_unaligned=True):
    unaligned = allow_unaligned and draw(st.booleans())
    return WorkloadSpec(
        pattern=draw(st.sampled_from(["uniform", "zipfian"])),
        read_fraction=draw(st.sampled_from([0.0, 0.3, 0.7])),
        op_size=128 if unaligned else draw(st.sampled_from([4096, 8192])),
        aligned=not unaligned,
        issue_model=draw(st.sampled_from(["async", "sync"])),
        depth=draw(st.integers(1, 64)),
        threads=draw(st.integers(1, 64)),
        total_ops=draw(st.integers(200, 1500)),
        seed=draw(st.integers(0, 1000)),
    )


@settings(max_examples=25, deadline=None)
@given(workloads(), st.integers(1, 3), st.booleans(), st.integers(0, 2000),
       st.sampled_from([8, 64, 4096]), st.integers(1, 2048), st.integers(0, 50))
def test_fuzzed_runs_report_no_violations(wl, n, flusher, warm, low_cap, cap, seed):
    cfg = small(num_ssds=n, workload=wl, flusher_enabled=flusher,
                cache_warmup_ops=warm, low_capacity=low_cap, global_cap_per_ssd=cap, seed=seed)
    sim = ArraySimulation(cfg)
    m = sim.run()
    assert not sim.violations, dict(sim.violations)
    assert sim.checks > 0
    assert m.app_ops_completed == wl.total_ops


@settings(max_examples=10, deadline=None)
@given(workloads(allow_unaligned=False), st.integers(0, 50))
def test_fuzzed_direct_runs_persist_every_write(wl, seed):
    cfg = small(workload=wl, cache_enabled=False, seed=seed)
    sim = ArraySimulation(cfg)
    sim.run()
    assert not sim.violations
    assert sim.verify_data() == 0


def test_queue_invariants_are_actually_checked():
    cfg = small(workload=WorkloadSpec(total_ops=4000, depth=64), low_capacity=16)
    sim = ArraySimulation(cfg)
    m = sim.run()
    assert not sim.violations
    assert m.flush_issued > 0 and m.total("writes_flush") > 0
    # every dispatch pass and every low-queue write is checked
    assert sim.checks > m.total("writes_flush")


def test_injected_corruption_is_caught():
    cfg = small(workload=WorkloadSpec(total_ops=1500))
    sim = ArraySimulation(cfg)
    sim.run()
    assert sim.verify_data() == 0
    page, tag = next(iter(sim.cache.acked.items()))
    lay = sim.layout
    sim.devices[lay.ssd_of(page)].tags[lay.local_page(page)] = tag + 10_000
    assert sim.verify_data() == 1
    assert sim.violations["lost_update"] == 1


def test_run_simulation_raises_on_violations(monkeypatch):
    def broken(self):
        self.violations["lost_update"] += 1
        return 1

    monkeypatch.setattr(ArraySimulation, "verify_data", broken)
    with pytest.raises(SimulationError):
        run_simulation(small(workload=WorkloadSpec(total_ops=300)))


def test_same_seed_same_metrics():
    cfg = small(workload=WorkloadSpec(total_ops=2000, pattern="zipfian", read_fraction=0.3),
                cache_warmup_ops=500, seed=4)
    a = as_dict(ArraySimulation(cfg).run())
    b = as_dict(ArraySimulation(cfg).run())
    assert a == b
    c = as_dict(ArraySimulation(replace(cfg, seed=5)).run())
    assert c != a


def test_gc_starts_at_different_times_across_ssds():
    cfg = small(num_ssds=6, cache_enabled=False, verify=False,
                workload=WorkloadSpec(total_ops=12000))
    sim = ArraySimulation(cfg)
    free = [dev.free_pages for dev in sim.devices]
    span = (cfg.ssd.gc_high_watermark - cfg.ssd.gc_low_watermark) * cfg.ssd.physical_pages
    assert max(free) - min(free) > span / 4
    m = sim.run()
    starts = [s.gc_first_start for s in m.ssds]
    assert all(t is not None for t in starts)
    assert len(set(starts)) >= 4


def test_other_ssds_keep_completing_while_one_collects():
    cfg = small(num_ssds=3, cache_enabled=False, verify=False,
                workload=WorkloadSpec(total_ops=6000))
    sim = ArraySimulation(cfg)
    overlaps = []
    orig = sim._on_device_done

    def spy(kind, req):
        busy = [i for i, d in enumerate(sim.devices) if d.gc_until > sim.engine.now]
        if busy and req.ssd not in busy:
            overlaps.append(req.ssd)
        orig(kind, req)

    sim.engine.register(EventKind.DEVICE_COMPLETION, spy)
    sim.run()
    assert overlaps


def test_busy_time_fits_inside_the_run():
    for cached in (False, True):
        cfg = small(num_ssds=3, cache_enabled=cached, verify=False,
                    workload=WorkloadSpec(total_ops=6000, read_fraction=0.3))
        m = ArraySimulation(cfg).run()
        for s in m.ssds:
            assert 0 < s.busy_time <= m.virtual_duration
            assert s.gc_time <= s.busy_time


def test_flush_accounting_closes():
    cfg = small(workload=WorkloadSpec(total_ops=5000, read_fraction=0.2), low_capacity=32,
                global_cap_per_ssd=16)
    m = ArraySimulation(cfg).run()
    assert m.flush_issued == m.flush_completed + m.flush_discarded + m.flush_in_flight
    assert m.flush_in_flight == 0
    assert m.flush_completed == m.total("writes_flush")


def test_device_writes_split_into_categories():
    for cached in (False, True):
        cfg = small(cache_enabled=cached, workload=WorkloadSpec(total_ops=3000, read_fraction=0.4))
        m = ArraySimulation(cfg).run()
        parts = sum(m.total(k) for k in ("writes_flush", "writes_writeback", "writes_direct", "writes_sync"))
        assert parts == m.device_writes


def test_direct_mode_writes_each_page_once():
    wl = WorkloadSpec(total_ops=2000, op_size=8192, read_fraction=0.0)
    sim = ArraySimulation(small(cache_enabled=False, workload=wl))
    m = sim.run()
    assert m.device_writes == m.total("writes_direct") == 2 * 2000
    assert m.device_reads == 0


def test_window_excludes_warmup_ops():
    wl = WorkloadSpec(total_ops=4000)
    m = ArraySimulation(small(workload=wl, warmup_fraction=0.25, verify=False)).run()
    assert m.window_ops <= 3000
    assert m.window_ops >= 3000 - wl.outstanding(2)
    assert m.iops > 0
    assert m.cache_hits + m.cache_misses <= 3000 + wl.outstanding(2)


def test_cache_warmup_gives_both_arms_the_same_start():
    wl = WorkloadSpec(total_ops=500, pattern="zipfian", read_fraction=0.5)
    cfg = small(workload=wl, cache_warmup_ops=3000, verify=False)
    a = ArraySimulation(replace(cfg, flusher_enabled=False))
    b = ArraySimulation(replace(cfg, flusher_enabled=True))
    snap = lambda sim: [(p.page, p.dirty, p.hits) if p else None for s in sim.cache.sets for p in s.slots]
    assert snap(a) == snap(b)
    assert a.cache.dirty_pages() > 0
    assert a.cache.hits == a.cache.misses == 0
    # sets already over the threshold are waiting for the flusher
    over = [s for s in b.cache.sets if s.dirty_count > cfg.flush_threshold]
    assert over and all(s.in_flush_fifo for s in over)
    assert not a.flusher.pending_sets


def test_warm_cache_runs_stay_consistent():
    wl = WorkloadSpec(total_ops=2000, read_fraction=0.3, op_size=128, aligned=False)
    sim = ArraySimulation(small(workload=wl, cache_warmup_ops=2000))
    sim.run()
    assert not sim.violations
    assert sim.verify_data() == 0


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(num_ssds=0)
    with pytest.raises(ValueError):
        SimConfig(occupancy=1.0)
    with pytest.raises(ValueError):
        SimConfig(warmup_fraction=1.0)
    with pytest.raises(ValueError):
        SimConfig(cache_warmup_ops=-1)
    assert SimConfig(num_ssds=2).footprint == 2 * SimConfig().local_footprint
    c = SimConfig(num_ssds=3)
    assert c.resolved_cache_pages() % c.set_size == 0
