from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from cilqg.cli import EXIT_OK, EXIT_SOLVER, EXIT_USAGE, EXIT_VALIDATION, OUT_ENV, main

HEADERS_WITH_UNITS = ("plan.csv", "speed.csv", "covariance.csv", "ellipses.csv", "constraints.csv")


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def numeric_entries(path):
    header, rows = read_csv(path)
    return [float(v) for r in rows for v in r[1:] if v != ""]


def plan(tmp_path, name="two_static_obstacles", mode="cilqg", sub="plan", seed=0):
    out = tmp_path / sub
    assert main(["plan", name, "--mode", mode, "--out", str(out), "--seed", str(seed)]) == EXIT_OK
    return out


def test_plan_writes_feasible_artifacts(tmp_path):
    out = plan(tmp_path)
    for f in (*HEADERS_WITH_UNITS, "policy.json", "summary.json"):
        assert (out / f).is_file()
    values = numeric_entries(out / "constraints.csv")
    assert values and max(values) <= 0.0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["feasible"] and summary["mode"] == "cilqg"
    header, rows = read_csv(out / "ellipses.csv")
    assert header == ["step", "point", "x[m]", "y[m]"]
    assert len(rows) == 51 * 64


def test_every_column_names_a_unit(tmp_path):
    out = plan(tmp_path)
    for f in HEADERS_WITH_UNITS:
        header, _ = read_csv(out / f)
        assert all("[" in h for h in header if h not in ("step", "point")), f


def test_cilqr_constraint_file_has_positive_entries(tmp_path):
    out = plan(tmp_path, mode="cilqr")
    assert max(numeric_entries(out / "constraints.csv")) > 0.0


def test_invalid_path_exits_1_without_output(tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["plan", str(tmp_path / "nope.json"), "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()
    assert "scenario not found" in capsys.readouterr().err


def test_schema_error_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "horizon": 3}))
    assert main(["plan", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "invalid scenario" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["plan", "two_static_obstacles", "--mode", "mpc"]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_plan_is_byte_deterministic(tmp_path):
    a, b = plan(tmp_path, sub="a", seed=3), plan(tmp_path, sub="b", seed=3)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_stalled_solve_exits_2_with_diagnostics(tmp_path):
    from cilqg import builtin_document
    doc = builtin_document("two_static_obstacles")
    doc["solver"]["max_outer"] = 1
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["plan", str(path), "--out", str(out)]) == EXIT_SOLVER
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "no_progress" and not summary["converged"]


def test_validate_passes_and_is_reproducible(tmp_path):
    out = plan(tmp_path)
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["validate", "two_static_obstacles", str(out), "--trials", "10000", "--seed", "5",
                 "--out", str(r1)]) == EXIT_OK
    assert main(["validate", "two_static_obstacles", str(out), "--trials", "10000", "--seed", "5",
                 "--threads", "3", "--out", str(r2)]) == EXIT_OK
    for f in ("violations.csv", "validation.json"):
        assert (r1 / f).read_bytes() == (r2 / f).read_bytes()
    header, rows = read_csv(r1 / "violations.csv")
    assert header == ["step", "constraint", "kind", "violation_rate[-]", "standard_error[-]"]
    report = json.loads((r1 / "validation.json").read_text())
    assert report["passed"] and report["max_violation_rate"] <= 0.03


def test_validate_zero_trials_exits_1(tmp_path, capsys):
    out = plan(tmp_path)
    assert main(["validate", "two_static_obstacles", str(out), "--trials", "0"]) == EXIT_USAGE
    assert "trials" in capsys.readouterr().err


def test_validate_missing_plan_exits_1(tmp_path):
    assert main(["validate", "two_static_obstacles", str(tmp_path)]) == EXIT_USAGE


def test_validate_failure_exits_3(tmp_path):
    out = plan(tmp_path, mode="cilqr")
    assert main(["validate", "two_static_obstacles", str(out), "--trials", "2000",
                 "--tolerance", "0"]) == EXIT_VALIDATION
    assert not json.loads((out / "validation.json").read_text())["passed"]


def test_compare_summarizes_modes(tmp_path):
    out = tmp_path / "cmp"
    code = main(["compare", "one_static_obstacle_curved", "--modes", "cilqg,cilqr,gbsp", "--out", str(out)])
    assert code == EXIT_OK
    header, rows = read_csv(out / "compare.csv")
    assert header[:6] == ["mode", "status", "min_clearance[m]", "max_constraint_value", "total_cost",
                          "solve_time[ms]"]
    by_mode = {r[0]: dict(zip(header, r)) for r in rows}
    assert [m for m, r in by_mode.items() if r["within_tightened_box"] == "true"] == ["cilqg"]
    for m in ("cilqg", "cilqr", "gbsp"):
        assert (out / m / "summary.json").is_file()


def test_compare_open_is_more_conservative(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "two_static_obstacles", "--modes", "cilqg,open", "--out", str(out)]) == EXIT_OK
    px = {m: json.loads((out / m / "summary.json").read_text())["terminal_state"]["px[m]"] for m in ("cilqg", "open")}
    assert px["open"] < px["cilqg"]


def test_compare_single_mode_matches_plan(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "dynamic_overtake", "--modes", "cilqg", "--out", str(out)]) == EXIT_OK
    _, rows = read_csv(out / "compare.csv")
    assert len(rows) == 1
    ref = plan(tmp_path, "dynamic_overtake")
    for f in ref.iterdir():
        assert (out / "cilqg" / f.name).read_bytes() == f.read_bytes()


def test_compare_rejects_unknown_mode(tmp_path):
    assert main(["compare", "two_static_obstacles", "--modes", "cilqg,foo", "--out", str(tmp_path)]) == EXIT_USAGE


def test_benchmark_reports_table(tmp_path, capsys):
    code = main(["benchmark", "dynamic_overtake", "--repeats", "3", "--out", str(tmp_path)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "mean [ms]" in out and "dynamic_overtake" in out
    lines = (tmp_path / "timings.csv").read_text().splitlines()
    assert lines[0] == "scenario,mode,repeat,solve_time[ms]" and len(lines) == 4
    assert main(["benchmark", "dynamic_overtake", "--repeats", "1"]) == EXIT_USAGE


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_out"))
    assert main(["plan", "dynamic_overtake"]) == EXIT_OK
    assert (tmp_path / "env_out" / "summary.json").is_file()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cilqg", "plan", "dynamic_overtake", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "converged" in proc.stdout
