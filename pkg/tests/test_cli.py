import csv
import subprocess
import sys

import pytest

from ssdgcsim.cli import (EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, ConfigError, Settings, compose,
                          convert, main, parse_lines, plan_runs, preset_names, preset_text)
from ssdgcsim.metrics import CSV_COLUMNS
from ssdgcsim.simulation import ArraySimulation

PRESETS = ["array-scale", "flusher-ab-aligned", "flusher-ab-unaligned", "mixed-ratio-sweep",
           "occupancy-sweep", "parallel-writes", "zipfian-writeback"]

# shrinks any preset to a few hundred ops per run
TINY = ["total_ops=400", "ops_per_ssd=0", "cache_warmup_ops=300", "report.reference=none"]


def _tiny(extra=()):
    return [a for kv in TINY + list(extra) for a in ("--override", kv)]


def test_parse_lines_strips_comments_and_blanks():
    text = "# header\nnum_ssds = 4   # trailing\n\n  occupancy=0.8\n"
    assert parse_lines(text) == [("num_ssds", "4"), ("occupancy", "0.8")]
    with pytest.raises(ConfigError):
        parse_lines("just words\n")


def test_convert_by_default_type():
    assert convert("k", "yes", False) is True
    assert convert("k", "off", True) is False
    assert convert("k", "12", 3) == 12
    assert convert("k", "1e3", 3) == 1000
    assert convert("k", "0.5", 1.0) == 0.5
    assert convert("k", " zipfian ", "uniform") == "zipfian"
    for raw, default in [("maybe", True), ("1.5", 3), ("x", 1.0), ("", "s")]:
        with pytest.raises(ConfigError):
            convert("k", raw, default)


def test_unknown_key_names_the_key():
    s = Settings()
    with pytest.raises(ConfigError) as info:
        s.apply("not_a_key", "1")
    assert info.value.key == "not_a_key"
    with pytest.raises(ConfigError):
        s.apply("sweep.bogus", "1,2")
    with pytest.raises(ConfigError):
        s.apply("report.reference", "median")


def test_unknown_key_exits_1(tmp_path, capsys):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("num_ssds = 2\nwidget_count = 3\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "widget_count" in capsys.readouterr().err
    assert main(["--preset", "occupancy-sweep", "--override", "nope=1", "--out",
                 str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["--preset", "no-such-preset", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_invalid_value_combination_exits_1(tmp_path):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("gc_low_watermark = 0.5\ngc_high_watermark = 0.1\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_overrides_compose_left_to_right(tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("num_ssds = 3\nsweep.depth = 8, 16\n")
    s = compose("occupancy-sweep", cfg, ["num_ssds=5", "num_ssds=2", "depth=4"], seed=9)
    assert s.values["num_ssds"] == 2
    # a plain value replaces an earlier sweep of the same key and vice versa
    assert "depth" not in s.sweeps and s.values["depth"] == 4
    assert s.sweeps["occupancy"] == [0.4, 0.6, 0.8]
    s2 = compose("occupancy-sweep", None, ["sweep.occupancy=0.5"], None)
    assert s2.sweeps["occupancy"] == [0.5]
    runs = plan_runs(s)
    assert all(r.config.seed == 9 and r.config.workload.seed == 9 for r in runs)
    assert all(r.config.num_ssds == 2 for r in runs)


def test_sweeps_expand_to_cartesian_product_with_arms():
    s = compose("parallel-writes", None, ["compare.flusher=true"], None)
    runs = plan_runs(s)
    assert len(runs) == 2 * 4 * 2
    assert [r.index for r in runs] == list(range(len(runs)))
    assert {r.arm for r in runs} == {"baseline", "flusher"}
    first = runs[0]
    assert first.point == "pattern=uniform depth=4"
    assert runs[0].config.flusher_enabled is False and runs[1].config.flusher_enabled is True


def test_ops_per_ssd_scales_total_ops():
    s = compose("array-scale", None, [], None)
    for r in plan_runs(s):
        assert r.config.workload.total_ops == 12000 * r.config.num_ssds


def test_list_presets_and_keys(capsys):
    assert main(["--list-presets"]) == EXIT_OK
    assert capsys.readouterr().out.split() == PRESETS
    assert preset_names() == PRESETS
    assert main(["--list-keys"]) == EXIT_OK
    out = capsys.readouterr().out
    for key in ("erase_us", "cache_pages", "set_size", "gclock_cap", "flush_threshold",
                "global_cap_per_ssd", "compare.flusher", "cache_warmup_ops"):
        assert f"{key} = " in out


@pytest.mark.parametrize("name", PRESETS)
def test_every_preset_is_a_valid_config_file(name, tmp_path):
    path = tmp_path / f"{name}.conf"
    path.write_text(preset_text(name))
    assert plan_runs(compose(None, path, [], None))


@pytest.mark.parametrize("name", PRESETS)
def test_every_preset_runs_end_to_end(name, tmp_path):
    out = tmp_path / "out"
    assert main(["--preset", name, "--out", str(out), "-q", *_tiny(["verify=true"])]) == EXIT_OK
    with open(out / "runs.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_COLUMNS
    assert len(rows) - 1 == len(plan_runs(compose(name, None, TINY, None)))
    assert (out / "summary.txt").read_text()


def test_same_seed_gives_byte_identical_csv(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = ["--preset", "mixed-ratio-sweep", "-q", *_tiny(["sweep.read_fraction=0.2,0.6"])]
    assert main([*args, "--out", str(a)]) == EXIT_OK
    assert main([*args, "--out", str(b)]) == EXIT_OK
    assert main([*args, "--out", str(c), "--seed", "77"]) == EXIT_OK
    assert (a / "runs.csv").read_bytes() == (b / "runs.csv").read_bytes()
    assert (a / "runs.csv").read_bytes() != (c / "runs.csv").read_bytes()


def test_parallel_jobs_match_serial_output(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--preset", "occupancy-sweep", "-q", *_tiny()]
    assert main([*args, "--out", str(a)]) == EXIT_OK
    assert main([*args, "--out", str(b), "--override", "jobs=2"]) == EXIT_OK
    assert (a / "runs.csv").read_bytes() == (b / "runs.csv").read_bytes()


def test_flusher_rows_carry_extra_writeback(tmp_path):
    out = tmp_path / "o"
    assert main(["--preset", "zipfian-writeback", "--out", str(out), "-q",
                 *_tiny(["sweep.read_fraction=0.4"])]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "runs.csv")))
    assert [r["arm"] for r in rows] == ["baseline", "flusher"]
    assert rows[0]["extra_writeback"] == "" and rows[1]["extra_writeback"] != ""
    assert "flusher" in (out / "summary.txt").read_text()


def test_timeseries_output(tmp_path):
    out = tmp_path / "o"
    assert main(["--preset", "occupancy-sweep", "--out", str(out), "-q",
                 *_tiny(["output.timeseries=true", "sample_every=50"])]) == EXIT_OK
    lines = (out / "timeseries.csv").read_text().splitlines()
    assert lines[0] == "run,time_us,ssd,high_len,low_len,in_flight"
    assert len(lines) > 1


def test_invariant_violation_exits_2(tmp_path, monkeypatch, capsys):
    def broken(self):
        self.violations["priority"] += 1

    monkeypatch.setattr(ArraySimulation, "check_full", broken)
    code = main(["--preset", "flusher-ab-aligned", "--out", str(tmp_path / "o"), "-q",
                 *_tiny(["verify=true", "sweep.issue_model=async"])])
    assert code == EXIT_INVARIANT
    assert "priority" in capsys.readouterr().err


def test_reference_normalization(tmp_path):
    out = tmp_path / "o"
    assert main(["--preset", "occupancy-sweep", "--out", str(out), "-q", "--override", "total_ops=400",
                 "--override", "report.reference=peak"]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "runs.csv")))
    for r in rows:
        assert float(r["reference_iops"]) == pytest.approx(62500.0)
        assert float(r["normalized_iops"]) == pytest.approx(float(r["iops"]) / 62500.0, rel=1e-5)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ssdgcsim", "--list-presets"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.split() == PRESETS
