import csv
import io
import json
import subprocess
import sys

import pytest

from robstab.cli import main, parse_grid, parse_scenario, parse_tau, parse_trip, UsageError
from robstab.netmodel import load_case
from robstab.powerflow import BaseLoading, Correlated, GlobalScale, SingleBus


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def _csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# seed=")
    return list(csv.reader(io.StringIO("\n".join(lines[1:]))))


def test_parse_scenario():
    w = load_case("wscc9")
    assert parse_scenario("base", w) == BaseLoading()
    assert parse_scenario("single:bus8:pf0.894lag", w) == SingleBus(8, 0.894, True)
    assert parse_scenario("single:load1:pf0.98lead", w) == SingleBus(5, 0.98, False)
    assert parse_scenario("correlated:kc=2", w) == Correlated(8, 2.0, 0.9, True)
    assert parse_scenario("correlated:kc=1:ref=5:pf1", w) == Correlated(5, 1.0, 1.0, True)
    assert parse_scenario("global:dispatch=slack", w) == GlobalScale("slack")
    for bad in ("nope", "single", "single:bus2", "single:load9", "correlated:x=1", "global:dispatch=odd", "single:bus8:pfx"):
        with pytest.raises(UsageError):
            parse_scenario(bad, w)


def test_parse_tau_trip_grid():
    w = load_case("wscc9")
    assert parse_tau(None, w) is None and parse_tau("uncertain", w) is None
    assert parse_tau("2", w).values == (2.0,) * 6
    assert parse_tau("5=1,6=2,8=3", w).pairs() == [(1, 1), (2, 2), (3, 3)]
    with pytest.raises(UsageError):
        parse_tau("5=1", w)
    with pytest.raises(UsageError):
        parse_tau("abc", w)
    assert parse_trip("1-4") == (1, 4)
    with pytest.raises(UsageError):
        parse_trip("14")
    assert len(parse_grid("0:1:5")) == 5
    with pytest.raises(UsageError):
        parse_grid("0:1")


def test_certify_rs(capsys):
    code, out, _ = _run(["certify", "--case", "cases/rudimentary2.json", "--scenario", "single:load1:pf0.98lag", "--lambda", "2.0"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["verdict"] == "RS" and d["certificate"]["rho"] > 0 and d["seed"] == 0


def test_certify_nrs_exit_code(capsys, tmp_path):
    q = tmp_path / "q.json"
    code, out, _ = _run(["certify", "--case", "rudimentary2", "--scenario", "single:load1:pf0.98lag", "--lambda", "3.0", "--samples", "20", "--dump-q", str(q)], capsys)
    assert code == 3
    assert json.loads(out)["verdict"] == "NRS"
    assert set(json.loads(q.read_text())) == {"q_g", "q_l"}


def test_trace_wscc_max_lambda(capsys):
    code, out, _ = _run(["trace", "--case", "cases/wscc9.json", "--scenario", "correlated:kc=1"], capsys)
    assert code == 0
    rows = _csv(out)
    assert rows[0] == ["lambda", "v_bus8", "converged"]
    assert max(float(r[0]) for r in rows[1:]) == pytest.approx(2.16, rel=0.05)


def test_linearize_json(capsys):
    code, out, _ = _run(["linearize", "--case", "rudimentary2", "--scenario", "single:load1", "--lambda", "1.0"], capsys)
    assert code == 0
    d = json.loads(out)
    assert (d["n_G"], d["n_L"]) == (2, 2)


def test_scan_and_simulate(capsys, tmp_path):
    code, out, _ = _run(["scan", "--case", "rudimentary2", "--scenario", "single:load1:pf0.98lag", "--tau-spec", "1", "--grid", "0:3.5:40"], capsys)
    assert code == 0
    rows = _csv(out)
    assert rows[0] == ["lambda", "re1", "im1", "re2", "im2", "abscissa", "event"]
    assert any("SNBOriginTouch" in r[-1] for r in rows[1:])
    out_file = tmp_path / "sim.json"
    code, _, _ = _run(["simulate", "--case", "rudimentary2", "--scenario", "single:load1:pf0.98lag", "--lambda", "2.0", "--tau-spec", "0.5", "--t-end", "20", "--format", "json", "--out", str(out_file)], capsys)
    assert code == 0
    assert json.loads(out_file.read_text())["label"] in ("Stable", "Inconclusive")


def test_usage_errors(capsys):
    assert _run(["certify", "--case", "missing_case.json", "--lambda", "1"], capsys)[0] == 2
    assert _run(["bogus"], capsys)[0] == 2
    code, _, err = _run(["certify", "--case", "wscc9", "--scenario", "single:bus2", "--lambda", "1"], capsys)
    assert code == 2 and "Traceback" not in err
    assert _run(["screen", "--case", "rudimentary2", "--trips", "1-2", "--tau-cases", "1"], capsys)[0] == 2
    assert _run(["repro", "fig99"], capsys)[0] == 2
    assert _run(["trace", "--case", "wscc9", "--jobs", "0"], capsys)[0] == 2


def test_no_traceback_from_console():
    r = subprocess.run([sys.executable, "-m", "robstab.cli", "simulate", "--case", "wscc9", "--tau-spec", "1", "--trip", "x"], capture_output=True, text=True)
    assert r.returncode == 2
    assert "Traceback" not in r.stderr and "bad branch" in r.stderr


def test_repro_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p, jobs in ((a, "1"), (b, "3")):
        assert main(["repro", "fig3", "--out", str(p), "--jobs", jobs]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().startswith("# seed=0\n")


def test_sweep_cli(capsys):
    code, out, _ = _run(["sweep", "--case", "wscc9", "--kind", "gain", "--values", "10,40", "--jobs", "2"], capsys)
    assert code == 0
    rows = _csv(out)
    assert rows[0] == ["value", "S", "SNB", "margin_pct", "error"] and len(rows) == 3


def test_repro_screening_schema(tmp_path, screening_report):
    p = tmp_path / "t1.csv"
    assert main(["repro", "table1", "--out", str(p), "--jobs", "4"]) == 0
    rows = _csv(p.read_text())
    assert rows == [[str(c) for c in r] for r in screening_report.csv_rows()]
    assert rows[0] == ["trip", "rsa_verdict", "security_indicator", "case1_label", "case1_abscissa", "case2_label", "case2_abscissa", "case3_label", "case3_abscissa"]
