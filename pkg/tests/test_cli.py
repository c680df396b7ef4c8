import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hjsys import cli
from hjsys.problem import builtin_problem, serialize_problem

from conftest import random_instance


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, json.loads(out.out), out.err


def test_solve_constcost(capsys, tmp_path):
    table = tmp_path / "v.csv"
    code, rep, _ = run(capsys, "solve", "builtin:constcost", "--lambda", "1", "--out", str(table))
    assert code == 0
    assert rep["schema_version"] == cli.SCHEMA_VERSION and rep["command"] == "solve"
    assert np.allclose(rep["results"]["values"], np.tile([2.0, 1.0], (8, 1)))
    assert rep["results"]["duality"] is None
    assert rep["diagnostics"]["residual"] <= rep["diagnostics"]["tolerance"]
    assert len(rep["problem"]["fingerprint"]) == 64
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["x", "mode", "value"] and len(rows) == 17
    assert rows[1] == ["0", "1", "2.0"]


def test_measure_constcost(capsys, tmp_path):
    out = tmp_path / "nu.csv"
    code, rep, _ = run(capsys, "measure", "builtin:constcost", "--lambda", "1",
                       "--z", "0", "--k", "1", "--out", str(out))
    res = rep["results"]
    assert code == 0
    assert np.allclose(res["masses"], [2 / 3, 1 / 3])
    assert res["gap"] <= 1e-10 and res["gap_tolerance"] == 1e-8
    assert res["adjoint_residual"] <= res["adjoint_tolerance"]
    assert res["adjoint_test_vectors"] == 101
    assert res["anchor"] == {"z": 0, "k": 1}
    rows = list(csv.DictReader(out.open()))
    assert {r["mode"] for r in rows} == {"1", "2"}
    assert np.isclose(sum(float(r["weight"]) for r in rows), 1.0)


def test_sweep_normalized_eikonal(capsys, tmp_path):
    out = tmp_path / "cauchy.csv"
    code, rep, _ = run(capsys, "sweep", "builtin:eikonal1d", "-p", "N=100", "-p", "K=3",
                       "-p", "normalize=true", "--out", str(out))
    res = rep["results"]
    assert code == 0
    assert res["e_consistent"] and res["cauchy_decreasing"]
    assert len(res["table"]) == 8 and len(res["distances"]) == 7
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 8 and rows[-1]["distance_to_next"] == ""


def test_sweep_custom_schedule_and_anchors(capsys):
    code, rep, _ = run(capsys, "sweep", "builtin:switch2", "-p", "N=20",
                       "--schedule", "0.2,0.1,0.05,0.025", "--anchors", "0:1,5:2")
    assert code == 0
    assert rep["results"]["anchors"] == [{"z": 0, "k": 1}, {"z": 5, "k": 2}]
    assert len(rep["results"]["table"][0]["gaps"]) == 2


def test_ergodic_eikonal(capsys, tmp_path):
    code, rep, _ = run(capsys, "ergodic", "builtin:eikonal1d", "--out", str(tmp_path / "e.csv"))
    assert code == 0
    assert abs(rep["results"]["c"][0] + 1) < 0.05
    assert rep["results"]["residual"] <= rep["results"]["tolerance"]
    assert rep["results"]["provenance"][0]["modes"] == [1]


def test_normal_form_report(capsys):
    code, rep, _ = run(capsys, "normal-form", "builtin:constcost", "-p", "B=[[1,-1],[0,0]]")
    assert code == 0
    assert rep["results"]["pi"] == [2, 1]
    assert rep["results"]["PBPt"] == [[0.0, 0.0], [-1.0, 1.0]]


def test_validate_codes(capsys):
    code, rep, _ = run(capsys, "validate", "builtin:eikonal1d")
    assert code == 0 and rep["results"]["validation"]["min_margin"] == 1.0
    code, rep, err = run(capsys, "validate", "builtin:constcost", "-p", "B=[[1,1],[0,1]]")
    assert code == 2
    assert rep["results"]["validation"]["witness"]["u"] == [1.0, -2.0]
    code, rep, _ = run(capsys, "validate", "builtin:eikonal1d", "-p", "K=1")
    assert code == 0 and rep["results"]["coercivity_warning"] is True


def test_solver_refuses_non_monotone(capsys):
    code, rep, err = run(capsys, "solve", "builtin:constcost", "-p", "B=[[1,1],[0,1]]",
                         "--lambda", "1")
    assert code == 2 and rep["error"]["type"] == "MonotonicityError"
    assert "MonotonicityError" in err


def test_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["solve", "builtin:constcost"])
    assert info.value.code == 1
    capsys.readouterr()
    code, rep, _ = run(capsys, "solve", str(tmp_path / "missing.json"), "--lambda", "1")
    assert code == 1 and rep["error"]["type"] == "FileNotFoundError"
    code, rep, _ = run(capsys, "measure", "builtin:constcost", "--lambda", "1", "--k", "3")
    assert code == 1
    code, rep, _ = run(capsys, "sweep", "builtin:constcost", "--anchors", "0-1")
    assert code == 1


def test_invalid_problem_file(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"grid": {"dim": 1}}')
    code, rep, _ = run(capsys, "validate", str(path))
    assert code == 2 and rep["error"]["type"] == "ProblemError"


def test_numerical_failure_code(capsys, tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(serialize_problem(random_instance(1, N=4, m=2, varying_B=True))))
    code, rep, _ = run(capsys, "ergodic", str(path))
    assert code == 3 and rep["error"]["type"] == "ErgodicError"


def test_oracle_agreement_and_threads(capsys, tmp_path, monkeypatch):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(serialize_problem(random_instance(4, N=3, m=2, K=2))))
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    code, rep, _ = run(capsys, "oracle", str(path), "--lambda", "0.5", "--z", "2", "--k", "2")
    assert code == 0 and rep["results"]["agree"]
    assert rep["diagnostics"]["threads"] == 3
    assert rep["results"]["n_policies"] == 64


def test_oracle_mismatch_code(capsys, tmp_path, monkeypatch):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(serialize_problem(random_instance(4, N=3, m=1, K=2))))
    real = cli.solve_discounted

    def off(p, lam, **kw):
        sol = real(p, lam, **kw)
        sol.values = sol.values + 1e-6
        return sol

    monkeypatch.setattr(cli, "solve_discounted", off)
    code, rep, _ = run(capsys, "oracle", str(path), "--lambda", "1")
    assert code == 4 and not rep["results"]["agree"]


def test_reports_are_deterministic(capsys, tmp_path):
    texts = []
    for _ in range(2):
        target = tmp_path / "r.json"
        cli.main(["measure", "builtin:switch2", "-p", "N=12", "--lambda", "0.1",
                  "--report", str(target)])
        rep = json.loads(target.read_text())
        rep.pop("wall_time_s")
        texts.append(json.dumps(rep, sort_keys=True))
    assert texts[0] == texts[1]


def test_tabulated_file_roundtrip(capsys, tmp_path):
    p = builtin_problem("switch2", {"N": 10})
    path = tmp_path / "s.json"
    path.write_text(json.dumps(serialize_problem(p)))
    code, rep, _ = run(capsys, "solve", str(path), "--lambda", "0.5")
    assert code == 0 and rep["problem"]["fingerprint"] == p.fingerprint()


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hjsys.cli", "normal-form", "builtin:switch2",
                           "-p", "N=4"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["results"]["kinds"] == ["irreducible"]
