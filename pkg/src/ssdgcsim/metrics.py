"""Run-wide measurements and their CSV / text serialization."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional


@dataclass
class SsdStats:
    device_reads: int = 0
    device_writes: int = 0
    writes_flush: int = 0
    writes_writeback: int = 0
    writes_direct: int = 0
    writes_sync: int = 0
    busy_time: int = 0
    gc_time: int = 0
    gc_cycles: int = 0
    gc_first_start: Optional[int] = None


@dataclass
class RunMetrics:
    app_ops_submitted: int = 0
    app_ops_completed: int = 0
    app_ops_in_flight: int = 0
    # ops counted in the steady-state window and its length
    window_ops: int = 0
    window_us: int = 0
    virtual_duration: int = 0
    events: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    flush_issued: int = 0
    flush_completed: int = 0
    flush_in_flight: int = 0
    discarded: dict = field(default_factory=lambda: {"evicted": 0, "cleaned": 0, "low_score": 0})
    ssds: list = field(default_factory=list)
    # (time, ssd, high_len, low_len, in_flight) sampled every N completions
    queue_samples: list = field(default_factory=list)
    spec_key: tuple = ()

    @property
    def iops(self) -> float:
        return self.window_ops * 1e6 / self.window_us if self.window_us > 0 else 0.0

    @property
    def hit_rate(self) -> Optional[float]:
        n = self.cache_hits + self.cache_misses
        return self.cache_hits / n if n else None

    @property
    def flush_discarded(self) -> int:
        return sum(self.discarded.values())

    def total(self, name: str) -> int:
        return sum(getattr(s, name) for s in self.ssds)

    @property
    def device_writes(self) -> int:
        return self.total("device_writes")

    @property
    def device_reads(self) -> int:
        return self.total("device_reads")


def extra_writeback(with_flusher: RunMetrics, without_flusher: RunMetrics) -> float:
    """Relative increase in device writes caused by the flusher.

    Both runs must replay the same workload from the same seed; the sums
    include the final cache sync so the two arms persist identical data.
    """
    if with_flusher.spec_key != without_flusher.spec_key:
        raise ValueError("extra_writeback needs two runs of the same workload and seed")
    base = without_flusher.device_writes
    if base == 0:
        raise ValueError("baseline run wrote nothing")
    return (with_flusher.device_writes - base) / base


def report(m: RunMetrics) -> dict:
    """Flat record of a run; derived values recomputed from raw counters."""
    rec = {
        "app_ops_submitted": m.app_ops_submitted,
        "app_ops_completed": m.app_ops_completed,
        "app_ops_in_flight": m.app_ops_in_flight,
        "window_ops": m.window_ops,
        "window_us": m.window_us,
        "iops": m.iops,
        "virtual_duration_us": m.virtual_duration,
        "cache_hits": m.cache_hits,
        "cache_misses": m.cache_misses,
        "device_reads": m.device_reads,
        "device_writes": m.device_writes,
        "writes_flush": m.total("writes_flush"),
        "writes_writeback": m.total("writes_writeback"),
        "writes_direct": m.total("writes_direct"),
        "writes_sync": m.total("writes_sync"),
        "flush_issued": m.flush_issued,
        "flush_completed": m.flush_completed,
        "flush_in_flight": m.flush_in_flight,
        "discard_evicted": m.discarded["evicted"],
        "discard_cleaned": m.discarded["cleaned"],
        "discard_low_score": m.discarded["low_score"],
        "gc_time_us": m.total("gc_time"),
        "gc_cycles": m.total("gc_cycles"),
        "busy_time_us": m.total("busy_time"),
    }
    hr = m.hit_rate
    if hr is not None:
        rec["hit_rate"] = hr
    return rec


# Column order of the per-run CSV; README documents each column.
CSV_COLUMNS = [
    "run", "scenario", "arm", "point", "num_ssds", "occupancy", "pattern", "read_fraction",
    "op_size", "issue_model", "outstanding", "flusher", "cache_pages", "seed",
    "app_ops", "window_ops", "window_us", "iops", "iops_per_ssd", "reference_iops",
    "normalized_iops", "extra_writeback", "hit_rate", "cache_hits", "cache_misses",
    "device_reads", "device_writes", "writes_flush", "writes_writeback", "writes_direct",
    "writes_sync", "flush_issued", "flush_completed", "discard_evicted", "discard_cleaned",
    "discard_low_score", "gc_time_us", "gc_cycles", "virtual_duration_us", "events",
]

TIMESERIES_COLUMNS = ["run", "time_us", "ssd", "high_len", "low_len", "in_flight"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_csv(rows: Iterable[dict], fh, columns=CSV_COLUMNS) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])


def csv_text(rows: Iterable[dict], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    write_csv(rows, buf, columns)
    return buf.getvalue()


def summary(rows: list[dict]) -> str:
    lines = []
    for r in rows:
        hr = r.get("hit_rate")
        parts = [
            f"[{r['run']}] {r['scenario']} {r['arm']:<8} {r['point']:<28}",
            f"iops={r['iops']:>10.0f}",
        ]
        if r.get("normalized_iops") is not None:
            parts.append(f"norm={r['normalized_iops']:.3f}")
        if hr is not None:
            parts.append(f"hit={hr:.4f}")
        if r.get("extra_writeback") is not None:
            parts.append(f"extra_wb={r['extra_writeback']:.4f}")
        parts.append(f"dev_writes={r['device_writes']}")
        lines.append("  ".join(parts))
    return "\n".join(lines) + "\n"


def as_dict(m: RunMetrics) -> dict:
    return asdict(m)
