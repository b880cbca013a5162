"""Acceptance criteria 1 to 13, one test each, through the same checks the CLI runs.

Every test prints one PASS/FAIL line with the wall time and enforces the time
limit of its criterion. Logged values come from the check reports.
"""

import time

import pytest

from flaglab import cli
from flaglab.suites import CHECKS, Context, primitive_cases, run_check

SEED = 0
# criterion -> (checks, wall-clock limit in seconds)
CRITERIA = {
    1: (["tables.golden"], 1.0),
    2: (["tables.shuffle_counts"], None),
    3: (["geom.bound", "geom.calibration"], 30.0),
    4: (["group.axioms"], 5.0),
    5: (["cancellation.primitives"], 60.0),
    6: (["bump.annular", "bump.first_block"], 60.0),
    7: (["kernel.flag_size"], 600.0),
    8: (["convolution.support", "convolution.decay"], 600.0),
    9: (["convolution.truncated"], 300.0),
    10: (["convolution.cotlar_stein", "convolution.l2_norm"], 600.0),
    11: (["composition.classes"], 1200.0),
    12: (["operators.composition_bound", "operators.gamma_comparison", "operators.kernel_gamma",
          "operators.almost_orthogonality", "operators.square_function"], 1200.0),
}


def report_line(capsys, criterion, ok, seconds, detail):
    with capsys.disabled():
        print(f"\ncriterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {seconds:8.2f} s  {detail}")


def run_criterion(criterion, capsys):
    names, limit = CRITERIA[criterion]
    ctx = Context(seed=SEED)
    t0 = time.perf_counter()
    results = [run_check(n, ctx) for n in names]
    elapsed = time.perf_counter() - t0
    verdicts = {c.name: c.verdict for c in results}
    in_time = limit is None or elapsed < limit
    ok = all(v == "PASS" for v in verdicts.values()) and in_time
    detail = ", ".join(f"{k}={v}" for k, v in verdicts.items())
    if not in_time:
        detail += f", over the {limit:.0f} s limit"
    report_line(capsys, criterion, ok, elapsed, detail)
    return results, elapsed, limit


def values(results, name):
    return next(c.values for c in results if c.name == name)


def assert_passed(results, elapsed, limit):
    for c in results:
        assert c.verdict == "PASS", (c.name, c.values)
    if limit is not None:
        assert elapsed < limit


def test_registry_matches_criteria():
    listed = {n for names, _ in CRITERIA.values() for n in names}
    assert listed == set(CHECKS)


def test_criterion_01_golden_tables(capsys):
    res, t, lim = run_criterion(1, capsys)
    v = values(res, "tables.golden")
    assert [v[k]["rows"] for k in ("table1", "table2", "table3")] == [10, 6, 6]
    assert all(v[k]["byte_identical"] for k in ("table1", "table2", "table3"))
    assert_passed(res, t, lim)


def test_criterion_02_shuffle_counts(capsys):
    res, t, lim = run_criterion(2, capsys)
    assert values(res, "tables.shuffle_counts")["mismatches"] == []
    assert_passed(res, t, lim)


def test_criterion_03_geometric_sums(capsys):
    res, t, lim = run_criterion(3, capsys)
    b = values(res, "geom.bound")
    assert b["count"] == 100 and b["relative_change"] < 0.05
    c = values(res, "geom.calibration")
    assert abs(c["value"] - 1.4427) <= 1e-3
    assert_passed(res, t, lim)


def test_criterion_04_group_axioms(capsys):
    res, t, lim = run_criterion(4, capsys)
    for kind, r in values(res, "group.axioms").items():
        assert r["symbolic_associativity"], kind
        assert r["dilation_residual"] <= 1e-12, kind
        assert r["samples"] == 1000, kind
    assert_passed(res, t, lim)


def test_criterion_05_primitives(capsys):
    res, t, lim = run_criterion(5, capsys)
    v = values(res, "cancellation.primitives")
    labels = [case[0] for case in primitive_cases()]
    assert len(labels) == 10
    for name in labels:
        assert v[name]["relative_l2"] < 1e-6, name
        assert v[name]["j2_leak"] < 1e-8, name
    assert_passed(res, t, lim)


def test_criterion_06_bump_decompositions(capsys):
    res, t, lim = run_criterion(6, capsys)
    a = values(res, "bump.annular")
    assert a["resum_residual"] < 1e-6
    assert a["max_marginal"] < 1e-8
    f = values(res, "bump.first_block")
    for name in ("abelian_1_1", "heisenberg_2_1"):
        assert f[name]["resum_residual"] < 1e-6, name
        assert f[name]["inner_annulus_max"] < 1e-10, name
    assert max(f["strong_per_term_marginal"]) < 1e-8
    assert_passed(res, t, lim)


def test_criterion_07_flag_size(capsys):
    res, t, lim = run_criterion(7, capsys)
    v = values(res, "kernel.flag_size")
    for name in ("abelian_1_1", "heisenberg_2_1"):
        assert v[name]["strong_passed"], name
        assert v[name]["control_diverges"], name
    assert_passed(res, t, lim)


def test_criterion_08_support_and_decay(capsys):
    res, t, lim = run_criterion(8, capsys)
    s = values(res, "convolution.support")
    assert len(s["constants"]) == 20
    d = values(res, "convolution.decay")
    assert d["n1"]["eps"] > 0 and d["n1"]["r2"] > 0.9
    assert 0.8 <= d["n1"]["eps"] <= 1.2
    assert d["n2"]["eps"] > 0 and d["n2"]["r2"] > 0.9
    assert_passed(res, t, lim)


def test_criterion_09_truncated_widths(capsys):
    res, t, lim = run_criterion(9, capsys)
    v = values(res, "convolution.truncated")
    assert all(w["passed"] for w in v["width_checks"])
    assert v["linearity"]["spread"] <= 0.20
    assert_passed(res, t, lim)


def test_criterion_10_cotlar_stein_and_l2(capsys):
    res, t, lim = run_criterion(10, capsys)
    cs = values(res, "convolution.cotlar_stein")
    assert cs["growth"] < 0.05 and cs["control_growth"] >= 0.05
    l2 = values(res, "convolution.l2_norm")
    assert l2["stability"]["constants"]["change"] < 0.05
    assert l2["methods"]["constants"]["gap"] < 0.05
    assert_passed(res, t, lim)


def test_criterion_11_composition(capsys):
    res, t, lim = run_criterion(11, capsys)
    v = values(res, "composition.classes")
    assert len(v["partitions"]) == 5
    assert v["fourier_oracle"] < 1e-6
    assert len(v["same_partition_classes"]) == 1
    for mu, rep in v["classes"].items():
        assert rep["flag_growth"] < 0.05, mu
        assert rep["weak_eps"] > 0, mu
    assert_passed(res, t, lim)


def test_criterion_12_operators(capsys):
    res, t, lim = run_criterion(12, capsys)
    sq = values(res, "operators.square_function")
    assert sq["calderon_residual"] < 0.05
    assert_passed(res, t, lim)


def test_criterion_13_determinism(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("FLAGLAB_SEED", raising=False)
    t0 = time.perf_counter()
    codes, blobs = [], []
    for k in range(2):
        out = tmp_path / f"run{k}"
        codes.append(cli.main(["run", "all", "--out", str(out), "--format", "json"]))
        capsys.readouterr()
        blobs.append({n: (out / n).read_bytes() for n in ("report.json", "report.csv")})
    same = blobs[0] == blobs[1]
    report_line(capsys, 13, same, time.perf_counter() - t0,
                f"report.json and report.csv {'identical' if same else 'differ'}, exit codes {codes}")
    assert same
