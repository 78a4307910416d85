"""Command line front end: config files, presets, sweeps and CSV output.

Config files are flat text, one ``key = value`` per line, ``#`` starts a
comment. Keys are listed by ``ssdgcsim --list-keys``. A few keys steer the
experiment rather than a single run:

    scenario = name            label written to every CSV row
    sweep.<key> = v1, v2, ...  run the cartesian product of all sweeps
    compare.flusher = true     run every point twice, without and with the flusher
    report.reference = peak | ceiling | none
    output.timeseries = true   also write per-SSD queue samples
    ops_per_ssd = N            total_ops = N * num_ssds (0 keeps total_ops)
    jobs = N                   worker processes for independent runs
"""

from __future__ import annotations

import argparse
import itertools
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from ssdgcsim.metrics import (CSV_COLUMNS, TIMESERIES_COLUMNS, RunMetrics, extra_writeback,
                              report, summary, write_csv)
from ssdgcsim.simulation import ArraySimulation, SimConfig
from ssdgcsim.ssd import SsdConfig, steady_state_iops
from ssdgcsim.workload import WorkloadSpec

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2

REFERENCES = ("none", "peak", "ceiling")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


def _defaults() -> dict[str, tuple[str, Any]]:
    """key -> (owner, default) for every run-level key."""
    table: dict[str, tuple[str, Any]] = {}
    for f in fields(SsdConfig):
        table[f.name] = ("ssd", getattr(SsdConfig(), f.name))
    wl = WorkloadSpec()
    for f in fields(WorkloadSpec):
        if f.name not in ("footprint_pages", "seed"):
            table[f.name] = ("workload", getattr(wl, f.name))
    sim = SimConfig()
    for f in fields(SimConfig):
        if f.name not in ("ssd", "workload"):
            table[f.name] = ("sim", getattr(sim, f.name))
    table["ops_per_ssd"] = ("plan", 0)
    return table


RUN_KEYS = _defaults()
PLAN_KEYS: dict[str, Any] = {
    "scenario": "custom",
    "compare.flusher": False,
    "report.reference": "none",
    "output.timeseries": False,
    "jobs": 1,
}


def list_keys() -> list[tuple[str, Any]]:
    out = [(k, d) for k, (_, d) in RUN_KEYS.items()]
    out += list(PLAN_KEYS.items())
    return sorted(out)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def convert(key: str, raw: str, default: Any) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if isinstance(default, int):
            value = float(text)
            if not value.is_integer():
                raise ValueError(f"expected an integer, got {text!r}")
            return int(value)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    if not text:
        raise ConfigError(key, "empty value")
    return text


def parse_lines(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


@dataclass
class Settings:
    """Composed configuration: run keys, sweeps and experiment options."""

    values: dict[str, Any] = field(default_factory=dict)
    sweeps: dict[str, list[Any]] = field(default_factory=dict)
    plan: dict[str, Any] = field(default_factory=lambda: dict(PLAN_KEYS))

    def apply(self, key: str, raw: str) -> None:
        if key.startswith("sweep."):
            name = key[len("sweep."):]
            if name not in RUN_KEYS:
                raise ConfigError(key, "unknown key")
            items = [v for v in raw.split(",") if v.strip()]
            if not items:
                raise ConfigError(key, "empty sweep")
            self.sweeps[name] = [convert(key, v, RUN_KEYS[name][1]) for v in items]
            self.values.pop(name, None)
        elif key in PLAN_KEYS:
            self.plan[key] = convert(key, raw, PLAN_KEYS[key])
            if key == "report.reference" and self.plan[key] not in REFERENCES:
                raise ConfigError(key, f"must be one of {', '.join(REFERENCES)}")
            if key == "jobs" and self.plan[key] < 1:
                raise ConfigError(key, "must be at least 1")
        elif key in RUN_KEYS:
            self.values[key] = convert(key, raw, RUN_KEYS[key][1])
            self.sweeps.pop(key, None)
        else:
            raise ConfigError(key, "unknown key")

    def apply_text(self, text: str, source: str) -> None:
        for key, raw in parse_lines(text, source):
            self.apply(key, raw)


def preset_names() -> list[str]:
    base = resources.files("ssdgcsim") / "presets"
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".conf"))


def preset_text(name: str) -> str:
    path = resources.files("ssdgcsim") / "presets" / f"{name}.conf"
    if not path.is_file():
        raise ConfigError("--preset", f"no preset named {name!r}")
    return path.read_text(encoding="utf-8")


def build_config(values: dict[str, Any]) -> SimConfig:
    groups: dict[str, dict[str, Any]] = {"ssd": {}, "workload": {}, "sim": {}, "plan": {}}
    for key, value in values.items():
        groups[RUN_KEYS[key][0]][key] = value
    sim_kw = groups["sim"]
    seed = sim_kw.get("seed", 0)
    try:
        ssd = SsdConfig(**groups["ssd"])
        wl = groups["workload"]
        per = groups["plan"].get("ops_per_ssd", 0)
        if per:
            wl["total_ops"] = per * sim_kw.get("num_ssds", 1)
        workload = WorkloadSpec(seed=seed, **wl)
        return SimConfig(ssd=ssd, workload=workload, **sim_kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError("config", str(exc)) from None


@dataclass
class PlannedRun:
    index: int
    arm: str
    point: str
    config: SimConfig


def plan_runs(settings: Settings) -> list[PlannedRun]:
    names = list(settings.sweeps)
    combos = list(itertools.product(*(settings.sweeps[n] for n in names))) or [()]
    arms = [("baseline", False), ("flusher", True)] if settings.plan["compare.flusher"] else [("single", None)]
    runs = []
    for combo in combos:
        values = dict(settings.values)
        values.update(zip(names, combo))
        point = " ".join(f"{n}={v}" for n, v in zip(names, combo)) or "-"
        for arm, flusher in arms:
            v = dict(values)
            if flusher is not None:
                v["flusher_enabled"] = flusher
            runs.append(PlannedRun(len(runs), arm, point, build_config(v)))
    return runs


@dataclass
class RunResult:
    metrics: RunMetrics
    violations: dict


def execute(config: SimConfig) -> RunResult:
    sim = ArraySimulation(config)
    metrics = sim.run()
    return RunResult(metrics, dict(sim.violations))


class References:
    """Memoized reference throughputs for normalization."""

    def __init__(self) -> None:
        self._cache: dict[tuple, float] = {}

    def get(self, kind: str, cfg: SimConfig) -> Optional[float]:
        if kind == "none":
            return None
        if kind == "peak":
            return cfg.num_ssds * cfg.ssd.peak_write_iops
        wl = cfg.workload
        base = (cfg.occupancy, wl.pattern, wl.zipf_exponent, tuple(vars(cfg.ssd).items()),
                cfg.precondition_passes)
        total = 0.0
        for i in range(cfg.num_ssds):
            key = base + (cfg.seed + i,)
            if key not in self._cache:
                self._cache[key] = steady_state_iops(
                    cfg.occupancy, cfg.ssd, pattern=wl.pattern, zipf_exponent=wl.zipf_exponent,
                    passes=cfg.precondition_passes, seed=cfg.seed + i)
            total += self._cache[key]
        return total


def make_row(run: PlannedRun, m: RunMetrics, scenario: str) -> dict:
    cfg = run.config
    wl = cfg.workload
    rec = report(m)
    row = {
        "run": run.index,
        "scenario": scenario,
        "arm": run.arm,
        "point": run.point,
        "num_ssds": cfg.num_ssds,
        "occupancy": cfg.occupancy,
        "pattern": wl.pattern,
        "read_fraction": wl.read_fraction,
        "op_size": wl.op_size,
        "issue_model": wl.issue_model,
        "outstanding": wl.outstanding(cfg.num_ssds),
        "flusher": cfg.cache_enabled and cfg.flusher_enabled,
        "cache_pages": cfg.resolved_cache_pages() if cfg.cache_enabled else 0,
        "seed": cfg.seed,
        "app_ops": m.app_ops_completed,
        "iops_per_ssd": m.iops / cfg.num_ssds,
        "virtual_duration_us": m.virtual_duration,
        "events": m.events,
    }
    for key in CSV_COLUMNS:
        if key not in row and key in rec:
            row[key] = rec[key]
    return row


def run_settings(settings: Settings, *, progress=None) -> tuple[list[dict], list[list], dict]:
    """Execute every planned run; returns (rows, timeseries rows, violations)."""
    runs = plan_runs(settings)
    jobs = settings.plan["jobs"]
    if jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(execute, [r.config for r in runs]))
    else:
        results = []
        for r in runs:
            results.append(execute(r.config))
            if progress is not None:
                progress(r, results[-1].metrics)
    refs = References()
    kind = settings.plan["report.reference"]
    scenario = settings.plan["scenario"]
    rows: list[dict] = []
    series: list[list] = []
    violations: dict = {}
    baseline: dict[str, RunMetrics] = {}
    for run, res in zip(runs, results):
        m = res.metrics
        row = make_row(run, m, scenario)
        ref = refs.get(kind, run.config)
        if ref:
            row["reference_iops"] = ref
            row["normalized_iops"] = m.iops / ref
        if run.arm == "baseline":
            baseline[run.point] = m
        elif run.arm == "flusher" and run.point in baseline:
            row["extra_writeback"] = extra_writeback(m, baseline[run.point])
        rows.append(row)
        for t, ssd, hi, lo, inflight in m.queue_samples:
            series.append([run.index, t, ssd, hi, lo, inflight])
        for k, v in res.violations.items():
            violations[f"run {run.index}: {k}"] = v
    return rows, series, violations


def compose(preset: Optional[str], config: Optional[Path], overrides: list[str],
            seed: Optional[int]) -> Settings:
    settings = Settings()
    if preset:
        settings.plan["scenario"] = preset
        settings.apply_text(preset_text(preset), f"preset {preset}")
    if config:
        try:
            text = Path(config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        settings.apply_text(text, str(config))
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--override", f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        settings.apply(key.strip(), value)
    if seed is not None:
        settings.apply("seed", str(seed))
    return settings


def pairs_summary(rows: list[dict]) -> str:
    lines = []
    base = {r["point"]: r for r in rows if r["arm"] == "baseline"}
    for r in rows:
        if r["arm"] == "flusher" and r["point"] in base and base[r["point"]]["iops"] > 0:
            gain = r["iops"] / base[r["point"]]["iops"] - 1.0
            lines.append(f"{r['point']}: flusher {gain:+.1%} IOPS, extra writeback "
                         f"{r['extra_writeback']:.2%}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_outputs(out: Path, rows: list[dict], series: list[list], timeseries: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", encoding="utf-8", newline="") as fh:
        write_csv(rows, fh)
    (out / "summary.txt").write_text(summary(rows) + pairs_summary(rows), encoding="utf-8")
    if timeseries:
        import csv

        with open(out / "timeseries.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMESERIES_COLUMNS)
            w.writerows(series)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssdgcsim", description="Simulate an SSD array with a page cache "
                                "and a dirty page flusher.")
    p.add_argument("--config", type=Path, help="config file (flat key = value)")
    p.add_argument("--preset", help="built-in scenario, see --list-presets")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a config key; repeatable, applied left to right")
    p.add_argument("--list-presets", action="store_true", help="print preset names and exit")
    p.add_argument("--list-keys", action="store_true", help="print config keys with defaults and exit")
    p.add_argument("-q", "--quiet", action="store_true", help="no per-run progress lines")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_presets:
        print("\n".join(preset_names()))
        return EXIT_OK
    if args.list_keys:
        for key, default in list_keys():
            print(f"{key} = {default}")
        return EXIT_OK
    if not args.preset and not args.config:
        print("error: give --preset or --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        settings = compose(args.preset, args.config, args.override, args.seed)
        plan_runs(settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    def progress(run: PlannedRun, m: RunMetrics) -> None:
        if not args.quiet:
            print(f"run {run.index} {run.arm} {run.point}: {m.iops:.0f} IOPS", file=sys.stderr)

    rows, series, violations = run_settings(settings, progress=progress)
    write_outputs(args.out, rows, series, settings.plan["output.timeseries"])
    if not args.quiet:
        sys.stdout.write(summary(rows) + pairs_summary(rows))
    if violations:
        for k, v in sorted(violations.items()):
            print(f"invariant violation: {k} x{v}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
