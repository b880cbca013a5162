import csv
import io
import json
import shutil
import subprocess
import sys

import pytest

from flaglab import cli
from flaglab.harness import (ConfigError, RunReport, emit_report, flatten, load_config, run_suite,
                             validate_config, write_outputs)
from flaglab.suites import CHECKS, SUITES, Check, Context, plain, run_check, suite_checks


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.mark.parametrize("cfg, pointer", [
    ({}, ""),
    ({"seed": -1}, "/seed"),
    ({"seed": 0, "window": [-1, 4]}, "/window/0"),
    ({"seed": 0, "window": [2]}, "/window"),
    ({"seed": 0, "window": [2, 3]}, "/window/1"),
    ({"seed": 0, "colour": "red"}, ""),
    ({"seed": 0, "jobs": 0}, "/jobs"),
])
def test_config_errors_carry_a_pointer(cfg, pointer):
    with pytest.raises(ConfigError) as exc:
        validate_config(cfg, env={})
    assert exc.value.pointer == pointer


def test_config_defaults_and_env_seed():
    assert validate_config({"seed": 3}, env={}) == {"seed": 3, "window": [2, 6]}
    assert validate_config({"seed": 3}, env={"FLAGLAB_SEED": "11"})["seed"] == 11
    with pytest.raises(ConfigError, match="not an integer"):
        validate_config({"seed": 3}, env={"FLAGLAB_SEED": "x"})
    assert load_config(None, env={}) == {"seed": 0, "window": [2, 6]}


def test_config_file_must_be_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{seed: 1")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(str(p), env={})


def test_check_registry_covers_every_suite():
    assert {c.suite for c in CHECKS.values()} == set(SUITES)
    assert len(suite_checks("all")) == len(CHECKS)
    assert {c.criterion for c in CHECKS.values()} == set(range(1, 13))
    with pytest.raises(KeyError, match="unknown suite"):
        suite_checks("nope")


def test_per_check_seeds_differ_and_are_stable():
    ctx = Context(seed=5)
    assert ctx.seed_for("a") != ctx.seed_for("b")
    assert ctx.seed_for("a") == Context(seed=5).seed_for("a")
    assert 0 <= Context(seed=2 ** 40).seed_for("a") < 2 ** 32


def test_plain_handles_numpy_and_infinities():
    import numpy as np
    out = plain({"a": np.float64(1.5), "b": (np.int64(2), float("inf")), (1, 2): np.bool_(True)})
    assert out == {"a": 1.5, "b": [2, "inf"], "12": True}


def test_crashing_check_becomes_fail(monkeypatch):
    from flaglab import suites

    def boom(ctx):
        raise RuntimeError("kaput")

    monkeypatch.setitem(suites.CHECKS, "tables.golden", suites.CheckSpec("tables.golden", "tables", 1, boom))
    c = run_check("tables.golden", Context())
    assert c.verdict == "FAIL" and "kaput" in c.values["error"]


def test_bless_writes_golden_files(tmp_path):
    ctx = Context(golden_dir=str(tmp_path))
    assert run_check("tables.golden", ctx).verdict == "FAIL"
    blessed = run_check("tables.golden", Context(bless=True, golden_dir=str(tmp_path)))
    assert blessed.verdict == "PASS"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["table1.csv", "table2.csv", "table3.csv"]
    assert run_check("tables.golden", ctx).verdict == "PASS"
    (tmp_path / "table2.csv").write_bytes(b"tampered\n")
    assert run_check("tables.golden", ctx).verdict == "FAIL"


def fake_report():
    checks = [Check("x.one", 3, "PASS", {"b": 1.0, "a": [1, float("inf")], "c": {"z": True}}),
              Check("x.two", 4, "FAIL", {"alpha": {"00": 0.5, "10": 2.0}})]
    return RunReport("demo", {"seed": 0, "window": [2, 6]}, checks)


def test_json_report_is_sorted_and_formatted():
    text = emit_report(fake_report(), "json").decode()
    doc = json.loads(text)
    assert doc["summary"] == {"PASS": 1, "FAIL": 1, "SKIP": 0}
    assert '"b": 1.000000000000e+00' in text
    assert doc["checks"][0]["values"]["a"] == [1, "inf"]
    assert list(doc) == sorted(doc)


def test_csv_report_has_one_row_per_scalar():
    rows = list(csv.reader(io.StringIO(emit_report(fake_report(), "csv").decode())))
    assert rows[0] == ["check", "criterion", "verdict", "key", "value"]
    keys = [r[3] for r in rows[1:]]
    assert keys == ["a.0", "a.1", "b", "c.z", "alpha.00", "alpha.10"]


def test_text_report_columns_align():
    lines = emit_report(fake_report(), "text").decode().splitlines()
    assert lines[-1] == "PASS 1  FAIL 1  SKIP 0"
    bars = {ln.index("|") for ln in lines[1:-1] if "|" in ln}
    assert len(bars) == 1
    with pytest.raises(ValueError, match="unknown report format"):
        emit_report(fake_report(), "xml")


def test_flatten_empty_containers():
    assert flatten({"a": {}, "b": []}) == [("a", "{}"), ("b", "[]")]


def test_write_outputs_layout(tmp_path):
    rep = run_suite("tables", {"seed": 0, "window": [2, 6]})
    write_outputs(rep, tmp_path)
    names = sorted(str(p.relative_to(tmp_path)) for p in tmp_path.rglob("*") if p.is_file())
    assert names == ["report.csv", "report.json", "tables/table1.csv", "tables/table2.csv",
                     "tables/table3.csv", "timings.json"]
    assert "seconds" not in (tmp_path / "report.json").read_text()


def test_parallel_run_matches_serial():
    cfg = {"seed": 1, "window": [2, 6]}
    serial = emit_report(run_suite("tables", cfg, jobs=1), "json")
    parallel = emit_report(run_suite("tables", cfg, jobs=2), "json")
    assert serial == parallel


def test_cli_run_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("FLAGLAB_SEED", raising=False)
    out = tmp_path / "out"
    assert cli.main(["run", "tables", "--out", str(out)]) == 0
    assert "PASS 2  FAIL 0  SKIP 0" in capsys.readouterr().out
    bad = write_json(tmp_path / "bad.json", {"seed": 0, "window": [-1, 4]})
    assert cli.main(["run", "tables", "--config", bad]) == 2
    assert "config error at /window/0" in capsys.readouterr().err
    assert cli.main(["run", "tables", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["run", "tables", "--jobs", "0", "--out", str(out)]) == 2


def test_cli_run_reports_failure(tmp_path, monkeypatch, capsys):
    from flaglab import harness

    # point the runner at an empty golden directory
    monkeypatch.setattr(harness, "Context",
                        lambda **kw: Context(golden_dir=str(tmp_path / "empty"), **kw))
    assert cli.main(["run", "tables", "--out", str(tmp_path / "o"), "--format", "json"]) == 1
    assert json.loads(capsys.readouterr().out)["summary"]["FAIL"] == 1


def test_cli_env_seed_is_echoed(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("FLAGLAB_SEED", "7")
    assert cli.main(["run", "tables", "--out", str(tmp_path), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["config"]["seed"] == 7


def test_cli_tables(tmp_path, capsys):
    assert cli.main(["tables", "--pa", "2,3", "--pb", "2,3", "--format", "csv"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 7 and out[0].startswith("decomposition,")
    target = tmp_path / "t" / "table.txt"
    assert cli.main(["tables", "--pa", "5", "--pb", "1,1,1,1,1", "--out", str(target)]) == 0
    assert "ℝ⁵" in target.read_text(encoding="utf-8")
    assert cli.main(["tables", "--pa", "2", "--pb", "1,1,1"]) == 2


@pytest.mark.parametrize("argv", [["tables", "--pa", "2,x", "--pb", "2"], ["run", "nope"], []])
def test_cli_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_console_script_is_installed():
    r = subprocess.run([sys.executable, "-m", "flaglab.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("flaglab ")


@pytest.mark.skipif(shutil.which("flaglab") is None, reason="package not installed")
def test_entry_point_runs():
    r = subprocess.run(["flaglab", "tables", "--pa", "2,3", "--pb", "2,3", "--format", "csv"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and len(r.stdout.splitlines()) == 7
