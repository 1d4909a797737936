import csv
import json
import subprocess
import sys

import pytest

from miabp.cli import derive_seed, main, parse_grid, parse_policy
from miabp.model import PolicyParams


def _capacity(capsys, *args):
    assert main(["capacity", *args]) == 0
    return dict(line.split(" ", 1) for line in capsys.readouterr().out.splitlines())


def test_capacity_corners(capsys):
    assert _capacity(capsys, "--config", "net4", "--ray")["boundary"] == "9/17"
    assert _capacity(capsys, "--config", "net4", "--ray", "--no-mia")["boundary"] == "1/2"
    assert _capacity(capsys, "--config", "net10", "--ray")["boundary"] == "11/15"
    assert _capacity(capsys, "--config", "net4", "--ray", "--virtual")["boundary"] == "9/17"


def test_capacity_margin_and_certificate(capsys):
    out = _capacity(capsys, "--config", "net4", "--lambda", "1/2")
    assert out == {"feasible": "true", "margin": "1/34"}
    assert main(["capacity", "--config", "net4", "--lambda", "0.6"]) == 0
    assert "feasible false" in capsys.readouterr().out
    assert main(["capacity", "--config", "net4", "--certificate"]) == 0
    text = capsys.readouterr().out
    assert "pattern {1,2,3,4} 1" in text and "route 1 4 2 8/9" in text


def test_run_zero_slots(tmp_path):
    assert main(["run", "--config", "net4", "--slots", "0", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trace.csv").read_bytes() == b"t,total_backlog,delivered_total,cleared_partial\n"
    assert json.loads((tmp_path / "summary.json").read_text())["slots"] == 0


def test_run_outputs_and_repeat(tmp_path):
    args = ["run", "--config", "net4", "--policy", "tslot", "--T", "10", "--lambda", "0.5", "--slots", "3000", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    assert a == (tmp_path / "b" / "trace.csv").read_bytes()
    assert b"\r" not in a and len(a.splitlines()) == 3001
    s = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert s["policy"] == "tslot(T=10)" and s["seed"] == 3 and s["margin"] == "1/34"
    assert s["drift"]["violations"] == 0 and s["cleared_partial"] > 0
    assert s["bound"] is None  # eps * T = 10/34 <= 1
    light = [x if x != "0.5" else "0.2" for x in args]
    assert main(light + ["--out", str(tmp_path / "c")]) == 0
    s = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert s["margin"] == "28/85" and s["bound"]["name"] == "thm2" and s["within_bound"] is True


def test_run_verbose_adds_queues(tmp_path):
    assert main(["run", "--config", "net4", "--slots", "50", "--thin", "10", "--verbose", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    assert rows[0][:4] == ["t", "total_backlog", "delivered_total", "cleared_partial"]
    assert "U_1_4" in rows[0] and "V_1_4_4" in rows[0]
    assert [r[0] for r in rows[1:]] == ["0", "10", "20", "30", "40"]


def test_run_randomized(tmp_path):
    assert main(["run", "--config", "net4", "--policy", "randomized", "--slots", "2000", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["kind"] == "randomized"


def test_bad_inputs_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", "net4", "--lambda", "3", "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", "net4", "--policy", "randomized", "--lambda", "0.6", "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().out == ""


def test_logs_stay_off_stdout(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "miabp", "run", "--config", "net4", "--slots", "100", "--out", str(tmp_path)],
                          capture_output=True, text=True, check=True)
    assert proc.stdout == "" and "INFO" in proc.stderr


def test_grid_and_policy_parsing():
    assert [str(x) for x in parse_grid("0.05:0.2:0.05")] == ["1/20", "1/10", "3/20", "1/5"]
    assert [str(x) for x in parse_grid("0.3,1/2")] == ["3/10", "1/2"]
    p = parse_policy("tslot:T=15", PolicyParams())
    assert (p.kind, p.T) == ("tslot", 15)
    assert str(parse_policy("vq-enhanced:gamma=1/4", PolicyParams()).gamma) == "1/4"
    assert derive_seed(1, 0) != derive_seed(1, 1)


def _sweep(tmp_path, name, monkeypatch, threads, extra=()):
    monkeypatch.setenv("MIA_BP_THREADS", str(threads))
    out = tmp_path / name
    args = ["sweep", "--config", "net4", "--grid", "0.1,0.3", "--policies", "tslot:T=9", "vq",
            "--seeds", "2", "--slots", "1500", "--out", str(out), *extra]
    assert main(args) == 0
    return (out / "sweep.csv").read_bytes()


def test_sweep_rows_and_determinism(tmp_path, monkeypatch):
    a = _sweep(tmp_path, "a", monkeypatch, 1)
    b = _sweep(tmp_path, "b", monkeypatch, 2)
    assert a == b
    rows = list(csv.DictReader(a.decode().splitlines()))
    assert len(rows) == 8
    assert [(r["lambda"], r["policy"]) for r in rows[:4]] == [("1/10", "tslot(T=9)")] * 2 + [("1/10", "vq")] * 2
    assert rows[0]["seed"] != rows[1]["seed"] and rows[0]["seed"] == rows[2]["seed"]
    assert all(r["error"] == "" for r in rows)


def test_sweep_failure_rows(tmp_path, monkeypatch):
    monkeypatch.setenv("MIA_BP_THREADS", "1")
    assert main(["sweep", "--config", "net4", "--grid", "0.2,1.5", "--slots", "200", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert rows[0]["error"] == "" and "rate" in rows[1]["error"]


def test_single_point_sweep_matches_run(tmp_path, monkeypatch):
    monkeypatch.setenv("MIA_BP_THREADS", "1")
    assert main(["sweep", "--config", "net4", "--lambda", "0.4", "--policies", "vq", "--slots", "2000",
                 "--out", str(tmp_path / "s")]) == 0
    row = next(csv.DictReader(open(tmp_path / "s" / "sweep.csv")))
    assert main(["run", "--config", "net4", "--policy", "vq", "--lambda", "0.4", "--slots", "2000",
                 "--seed", row["seed"], "--out", str(tmp_path / "r")]) == 0
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert float(row["average_backlog"]) == summary["average_backlog"]
    assert row["stable"] == str(summary["verdict"]["stable"])
