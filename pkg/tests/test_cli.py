"""End-to-end runs of every CLI subcommand against tiny inputs."""

import csv
import json
import subprocess
import sys

import pytest

from ocfsim.cli import main
from ocfsim.scenario import load_scenario


@pytest.fixture
def tiny_file(tmp_path):
    path = tmp_path / "tiny.json"
    rc = main(["generate", "--scale", "2x4", "--arrival-fraction", "0.4",
               "--seed", "7", "--out", str(path)])
    assert rc == 0
    return str(path)


def test_generate_writes_loadable_scenario(tiny_file, capsys, tmp_path):
    sc = load_scenario(tiny_file)
    assert len(sc.agents) == 2 and len(sc.tasks) == 4

    again = tmp_path / "again.json"
    main(["generate", "--scale", "2x4", "--arrival-fraction", "0.4",
          "--seed", "7", "--out", str(again)])
    assert again.read_bytes() == (tmp_path / "tiny.json").read_bytes()


def test_generate_rejects_bad_scale(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--scale", "4by10", "--out",
              str(tmp_path / "x.json")])
    assert exc.value.code == 2


def test_solve_writes_structure_json(tiny_file, tmp_path, capsys):
    out = tmp_path / "structure.json"
    rc = main(["solve", "--scenario", tiny_file, "--policy", "heuristic",
               "--kmax", "20", "--cmax", "10", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert {"total", "unserved_bucket", "tasks", "agents", "termination",
            "certified_stable", "sweeps", "accepted"} <= set(doc)
    assert doc["total"] >= 0.0
    for rec in doc["agents"].values():
        assert rec["route"][0][0].startswith("D_")
    assert "J = " in capsys.readouterr().out


def test_solve_requires_checkpoint_for_tsac(tiny_file, tmp_path):
    with pytest.raises(ValueError, match="checkpoint"):
        main(["solve", "--scenario", tiny_file, "--policy", "tsac",
              "--out", str(tmp_path / "x.json")])


def test_policy_choices_are_enforced(tiny_file, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--scenario", tiny_file, "--policy", "greedy",
              "--out", str(tmp_path / "x.json")])
    assert exc.value.code == 2


def test_simulate_with_trace(tiny_file, tmp_path, capsys):
    prefix = str(tmp_path / "run")
    rc = main(["simulate", "--scenario", tiny_file, "--policy", "random",
               "--seed", "3", "--kmax", "15", "--cmax", "8", "--trace",
               "--out", prefix])
    assert rc == 0
    with open(prefix + "_timeline.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "t" and len(rows) > 1
    assert (tmp_path / "run_timeline_timing.csv").exists()
    with open(prefix + "_trace.csv", newline="") as fh:
        assert next(csv.reader(fh))[0] == "epoch_t"
    doc = json.loads((tmp_path / "run_structure.json").read_text())
    assert "total" in doc
    assert "final J" in capsys.readouterr().out


def test_simulate_without_trace_skips_trace_file(tiny_file, tmp_path):
    prefix = str(tmp_path / "plain")
    assert main(["simulate", "--scenario", tiny_file, "--out", prefix]) == 0
    assert not (tmp_path / "plain_trace.csv").exists()


def test_train_smoke(tmp_path, capsys):
    prefix = str(tmp_path / "net")
    rc = main(["train", "--scale", "2x4", "--steps", "25", "--seed", "1",
               "--out", prefix])
    assert rc == 0
    assert (tmp_path / "net.ckpt").exists()
    with open(prefix + "_curve.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["episode", "env_steps", "return", "final_total",
                       "entropy"]
    assert "checkpoint ->" in capsys.readouterr().out


def test_bench_smoke(tmp_path, capsys):
    prefix = str(tmp_path / "mc")
    rc = main(["bench", "--scales", "2x4", "--policies", "random,heuristic",
               "--runs", "2", "--seed", "42", "--kmax", "15", "--cmax", "8",
               "--out", prefix])
    assert rc == 0
    with open(prefix + "_bench.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 5   # header + 2 runs x 2 policies
    assert (tmp_path / "mc_bench_summary.csv").exists()
    assert (tmp_path / "mc_bench_timing.csv").exists()
    out = capsys.readouterr().out
    assert "random" in out and "heuristic" in out


def test_verify_smoke(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = main(["verify", "--sample-size", "2", "--runs", "1", "--skip-slope"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "descent violations:   0" in out
    assert not (tmp_path / "verify_failures.json").exists()


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "ocfsim.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("generate", "solve", "simulate", "train", "bench", "verify"):
        assert sub in proc.stdout
