import json
import subprocess
import sys

import numpy as np
import pytest

from zopo.cli import EXIT_FATAL, EXIT_OK, EXIT_USAGE, main
from zopo.domain import dump_pool, pool_from_arrays


@pytest.fixture
def line_files(tmp_path):
    pts = np.arange(30).reshape(-1, 1) / 10
    pool = pool_from_arrays(pts, texts=[f"item {i}" for i in range(30)])
    with open(tmp_path / "pool.jsonl", "w") as fh:
        dump_pool(pool, fh)
    (tmp_path / "scores.jsonl").write_text(
        "".join(json.dumps({"id": c.id, "score": float(c.embedding[0]) / 3}) + "\n" for c in pool.candidates))
    return tmp_path


def test_optimize_table(line_files, capsys):
    out = line_files / "out"
    code = main(["optimize", "--pool", str(line_files / "pool.jsonl"), "--objective", "table",
                 "--scores", str(line_files / "scores.jsonl"), "--budget", "12", "--init", "4",
                 "--kernel", "rbf", "--lr", "0.5", "--lambda", "inf", "--out", str(out)])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["queries_used"] == 12
    assert (out / "results.csv").read_text().count("\n") == 2
    trace = json.loads((out / "traces" / "task__zopo__0.json").read_text())
    assert trace["config"]["lam"] == "inf" and trace["config"]["learning_rate"] == 0.5


def test_optimize_synthetic_and_config_file(tmp_path, capsys):
    cfg = tmp_path / "opt.json"
    cfg.write_text(json.dumps({"budget": 15, "init": 5, "method": "random"}))
    code = main(["optimize", "--config", str(cfg), "--objective", "synthetic:rkhs,d=4,pool_size=50",
                 "--budget", "10", "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["queries_used"] == 10  # the flag overrides the file


def test_optimize_external_subprocess(line_files, capsys):
    evaluator = line_files.parent / "eval.py"
    evaluator.write_text(
        "import json, sys\n"
        "for line in sys.stdin:\n"
        "    r = json.loads(line)\n"
        "    print(json.dumps({'id': r['id'], 'score': int(r['text'].split()[1]) / 30}), flush=True)\n")
    code = main(["optimize", "--pool", str(line_files / "pool.jsonl"), "--objective", "external",
                 "--endpoint", f"cmd:{sys.executable} {evaluator}", "--method", "random",
                 "--budget", "30", "--init", "5", "--out", str(line_files / "ext")])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["best_score"] == pytest.approx(29 / 30)


@pytest.mark.parametrize("argv", [
    [],
    ["optimize", "--objective", "table"],
    ["optimize", "--objective", "table", "--out", "x"],
    ["optimize", "--objective", "nonsense", "--out", "x"],
    ["optimize", "--objective", "external", "--pool", "p", "--out", "x"],
    ["optimize", "--method", "bo"],
    ["bench"],
    ["profile", "--results", "r.csv", "--taus", "a,b", "--out", "p.csv"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_fatal_errors(tmp_path, capsys):
    assert main(["optimize", "--objective", "table", "--pool", str(tmp_path / "nope.jsonl"),
                 "--out", str(tmp_path / "o")]) == EXIT_FATAL
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path / "b")]) == EXIT_FATAL
    assert main(["profile", "--results", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "p.csv")]) == EXIT_FATAL
    assert "fatal" in capsys.readouterr().err


def test_bench_and_profile(tmp_path, capsys):
    cfg = {
        "seeds": 2, "budget": 15, "init": 5, "methods": ["zopo", "random"],
        "optimizer": {"kernel": {"widths": [8]}},
        "tasks": [{"name": "a", "synthetic": {"family": "rkhs", "d": 3, "pool_size": 40, "seed": 0}},
                  {"name": "b", "synthetic": {"family": "mlp", "d": 3, "pool_size": 40, "seed": 1}}],
    }
    (tmp_path / "bench.json").write_text(json.dumps(cfg))
    assert main(["bench", "--config", str(tmp_path / "bench.json"), "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
    assert main(["profile", "--results", str(tmp_path / "o" / "results.csv"), "--taus", "0,0.5,1",
                 "--out", str(tmp_path / "p.csv")]) == 0
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "method,tau,rho" and len(lines) == 7
    assert all(line.endswith(",1.0") for line in lines[1:] if ",1.0," in line)


def test_selftest_subprocess():
    proc = subprocess.run([sys.executable, "-m", "zopo.cli", "selftest"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "FAIL" not in proc.stdout and proc.stdout.count("PASS") >= 8


def test_selftest_failure_exit_code(monkeypatch, capsys):
    import zopo.selftest

    monkeypatch.setattr(zopo.selftest, "run_selftest", lambda report: False)
    assert main(["selftest"]) == 3
