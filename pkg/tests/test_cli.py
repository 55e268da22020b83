from __future__ import annotations

import json

import pytest

from stochctl.cli import EXIT_FAIL, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, REPORT_SCHEMA, main
from stochctl.models import MODEL_SCHEMA


def report(path):
    d = json.loads(path.read_text())
    assert d["schema"] == REPORT_SCHEMA
    return d


def test_check_exit_codes(tmp_path, capsys):
    assert main(["check", "harmonic-pair", "--report", str(tmp_path / "h.json")]) == EXIT_FAIL
    out = capsys.readouterr().out
    assert "rank:   3..3 of 5" in out
    d = report(tmp_path / "h.json")
    assert d["status"] == "fail" and set(d["result"]["rank"]["ranks"]) == {3}
    assert d["parameters"]["max_depth"] == 4
    assert main(["check", "slow"]) == EXIT_OK
    assert main(["check", "trap"]) == EXIT_FAIL
    assert "not-applicable" in capsys.readouterr().out


def test_model_file_written_and_checked(tmp_path):
    out = tmp_path / "slow.json"
    assert main(["model", "slow", "-o", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["schema"] == MODEL_SCHEMA
    assert main(["check", str(out)]) == EXIT_OK


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--model", "slow", "--seed", "7", "--steps", "200", "--paths", "2", "--z0", "0.5,0.5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("traj_p0.csv", "traj_p1.csv", "noise_p1.scnr"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ra, rb = report(tmp_path / "a" / "simulate_report.json"), report(tmp_path / "b" / "simulate_report.json")
    assert ra["result"]["final_states"] == rb["result"]["final_states"]
    assert (tmp_path / "a" / "traj_p0.csv").read_text() != (tmp_path / "a" / "traj_p1.csv").read_text()
    header = (tmp_path / "a" / "traj_p0.csv").read_text().splitlines()[0]
    assert header == "t,x,y,H"


def test_simulate_from_manifest(tmp_path):
    man = {"model": "gaussian-1d", "seed": 1, "dt": 0.01, "steps": 50, "z0": [0.2], "output_dir": "run"}
    (tmp_path / "m.json").write_text(json.dumps(man))
    assert main(["simulate", str(tmp_path / "m.json")]) == EXIT_OK
    d = report(tmp_path / "run" / "simulate_report.json")
    assert d["parameters"]["seed"] == 1 and d["parameters"]["model"] == "gaussian-1d"


def test_blowup_exits_numeric(tmp_path, capsys):
    model = {"schema": MODEL_SCHEMA, "name": "blow", "variables": ["x"], "field": ["x^2"], "H": None,
             "control": {"indices": [0]}}
    (tmp_path / "blow.json").write_text(json.dumps(model))
    code = main(["simulate", "--model", str(tmp_path / "blow.json"), "--z0", "1", "--dt", "0.01",
                 "--steps", "1000", "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC
    assert "step" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["check"],
        ["check", "no-such-model"],
        ["simulate"],
        ["steer", "--model", "slow"],
        ["simulate", "--model", "slow", "--z0", "a,b"],
        ["model", "nonexistent"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_manifest_rejects_unknown_fields(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"model": "slow", "colour": "red"}))
    assert main(["simulate", str(tmp_path / "m.json")]) == EXIT_USAGE


def test_steer_slow_succeeds(tmp_path, capsys):
    code = main(["steer", "--model", "slow", "--alpha", "0.1", "--z0", "0,0", "--z1", "0,5", "--eps", "0.5",
                 "--seed", "0", "--out", str(tmp_path)])
    assert code == EXIT_OK
    d = report(tmp_path / "steer_report.json")
    assert d["result"]["success"] and d["result"]["T"] >= 4.5
    assert (tmp_path / "control.csv").read_text().startswith("t,u_x")


def test_steer_trap_fails_with_certificate(tmp_path, capsys):
    code = main(["steer", "--model", "trap", "--z0", "0,3", "--z1", "0,0", "--eps", "0.25", "--budget", "1",
                 "--max-time", "5", "--attempts", "16", "--dt", "0.002", "--out", str(tmp_path)])
    assert code == EXIT_FAIL
    out = capsys.readouterr().out
    assert "trap certificate holds" in out
    d = report(tmp_path / "steer_report.json")
    assert d["result"]["trap_certificate"]["holds"]


def test_steer_to_start(tmp_path):
    code = main(["steer", "--model", "harmonic-pair", "--z0", "1,0,0,1", "--z1", "1,0,0,1", "--eps", "0.1",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert report(tmp_path / "steer_report.json")["result"]["T"] == 0.0


def test_stationarity_constant_function(tmp_path):
    man = {"model": "slow", "seed": 0, "dt": 0.01, "steps": 20000, "test_functions": ["1"], "output_dir": "."}
    (tmp_path / "m.json").write_text(json.dumps(man))
    assert main(["stationarity", str(tmp_path / "m.json")]) == EXIT_OK
    d = report(tmp_path / "stationarity_report.json")
    assert d["result"]["summary"] == "consistent with unique invariant measure"
