import csv
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zopo.domain import dump_pool, pool_from_arrays
from zopo.errors import ConfigError, ZopoError
from zopo.harness import (
    CellResult,
    ResultMatrix,
    cell_seed,
    emit_outputs,
    method_config,
    performance_profile,
    read_results,
    run_experiment,
)
from zopo.objectives import make_synthetic_task

HAND = {"t1": {"A": 0.9, "B": 0.8}, "t2": {"A": 0.5, "B": 0.6}, "t3": {"A": 0.7, "B": 0.7}}


def rho(profile, method, tau):
    return dict(profile[method])[tau]


def test_profile_hand_example():
    p = performance_profile(HAND, [0.0, 0.05, 0.1])
    assert rho(p, "A", 0.0) == rho(p, "B", 0.0) == 2 / 3
    assert rho(p, "A", 0.05) == rho(p, "B", 0.05) == 2 / 3
    assert rho(p, "A", 0.1) == rho(p, "B", 0.1) == 1.0


def test_profile_single_method_is_one():
    p = performance_profile({"a": {"m": 0.1}, "b": {"m": 0.9}}, [0.0, 0.5])
    assert [r for _, r in p["m"]] == [1.0, 1.0]


def test_profile_beyond_max_gap_is_one():
    p = performance_profile(HAND, [10.0])
    assert all(r == 1.0 for v in p.values() for _, r in v)


def test_profile_rejects_gaps_and_unsorted():
    with pytest.raises(ConfigError, match="t2/B"):
        performance_profile({"t1": {"A": 1, "B": 1}, "t2": {"A": 1}})
    with pytest.raises(ValueError):
        performance_profile(HAND, [0.1, 0.0])


def brute_profile(means, taus):
    # exact rational oracle
    tasks = list(means)
    methods = sorted({m for v in means.values() for m in v})
    out = {}
    for m in methods:
        out[m] = []
        for tau in taus:
            hits = sum(max(means[t].values()) - means[t][m] <= tau + 1e-12 for t in tasks)
            out[m].append(Fraction(hits, len(tasks)))
    return out


@settings(max_examples=100, deadline=None)
@given(
    n_tasks=st.integers(1, 6),
    n_methods=st.integers(1, 4),
    data=st.data(),
)
def test_profile_properties(n_tasks, n_methods, data):
    vals = st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1)
    means = {f"t{i}": {f"m{j}": data.draw(vals) for j in range(n_methods)} for i in range(n_tasks)}
    taus = sorted(data.draw(st.lists(st.floats(0, 1), min_size=1, max_size=6)))
    p = performance_profile(means, taus)
    ref = brute_profile(means, taus)
    for m, rows in p.items():
        rhos = [r for _, r in rows]
        assert all(a <= b for a, b in zip(rhos, rhos[1:]))
        assert rhos == [float(f) for f in ref[m]]
        assert all(round(r * n_tasks) == pytest.approx(r * n_tasks) for r in rhos)
    assert all(r == 1.0 for v in performance_profile(means, [1.0]).values() for _, r in v)
    # someone is always best
    assert max(dict(v)[taus[0]] if taus[0] == 0 else 1 for v in p.values()) > 0


def test_profile_from_result_matrix_uses_means():
    cells = [CellResult("t", m, s, final_best=v) for m, vs in (("a", [0.2, 0.8]), ("b", [0.5, 0.6])) for s, v in enumerate(vs)]
    mat = ResultMatrix(["t"], ["a", "b"], 2, cells)
    p = performance_profile(mat, [0.0])
    assert rho(p, "b", 0.0) == 1.0 and rho(p, "a", 0.0) == 0.0


def test_profile_rejects_incomplete_matrix():
    mat = ResultMatrix(["t"], ["a"], 2, [CellResult("t", "a", 0, final_best=0.3)])
    with pytest.raises(ConfigError, match="t/a/1"):
        performance_profile(mat)


def test_method_config_tags():
    assert method_config("zopo-matern", {}).kernel.kind == "matern52"
    assert method_config("zopo-noexplore", {}).lam == float("inf")
    assert method_config("zopo", {"lam": "inf"}).lam == float("inf")
    with pytest.raises(ConfigError):
        method_config("bo", {})
    with pytest.raises(ConfigError):
        method_config("zopo", {"budget": 3, "init_queries": 5})


def test_cell_seed_stable_and_distinct():
    assert cell_seed(0, "a", 0) == cell_seed(0, "a", 0)
    assert len({cell_seed(0, "a", 0), cell_seed(0, "a", 1), cell_seed(0, "b", 0), cell_seed(1, "a", 0)}) == 4


def small_config(**kw):
    cfg = {
        "master_seed": 0,
        "seeds": 2,
        "budget": 20,
        "init": 5,
        "methods": ["zopo", "random"],
        "optimizer": {"kernel": {"widths": [8, 8]}},
        "tasks": [{"name": "s", "synthetic": {"family": "rkhs", "d": 4, "pool_size": 60, "seed": 1}}],
    }
    cfg.update(kw)
    return cfg


def test_one_cell_experiment(tmp_path):
    exp = run_experiment(small_config(seeds=1, methods=["zopo"]), workers=1)
    cell = exp.matrix.cells[("s", "zopo", 0)]
    assert cell.final_best == cell.trace["final_best"]
    emit_outputs(exp, tmp_path)
    rows = list(csv.reader(open(tmp_path / "results.csv")))
    assert rows[0] == ["task", "method", "seed", "final_best", "queries_used"]
    assert len(rows) == 2 and float(rows[1][3]) == cell.final_best
    assert next(csv.reader(open(tmp_path / "curves.csv"))) == ["task", "method", "seed", "step", "best_so_far"]
    assert next(csv.reader(open(tmp_path / "profile.csv"))) == ["method", "tau", "rho"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["complete"] and summary["cells"]["s/zopo/0"]["status"] == "ok"
    assert len(summary["config_hash"]) == 64


def read_dir(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_rerun_byte_identical_including_parallel(tmp_path):
    cfg = small_config(tasks=[
        {"name": "s", "synthetic": {"family": "rkhs", "d": 4, "pool_size": 60, "seed": 1}},
        {"name": "m", "synthetic": {"family": "mlp", "d": 4, "pool_size": 60, "seed": 2}},
    ])
    emit_outputs(run_experiment(cfg, workers=1), tmp_path / "a")
    emit_outputs(run_experiment(cfg, workers=1), tmp_path / "b")
    emit_outputs(run_experiment(cfg, workers=2), tmp_path / "c")
    a, b, c = read_dir(tmp_path / "a"), read_dir(tmp_path / "b"), read_dir(tmp_path / "c")
    assert a == b == c
    assert "traces/s__zopo__0.json" in a


def test_curves_monotone_and_budget(tmp_path):
    exp = run_experiment(small_config(methods=["zopo", "zopo-matern", "zopo-noexplore", "random", "fd-zoo"]), workers=1)
    for c in exp.matrix.cells.values():
        assert c.status == "ok"
        assert c.queries_used == 20 and not c.truncated
        assert all(a <= b for a, b in zip(c.curve, c.curve[1:]))
        assert 0.0 <= c.final_best <= 1.0


def test_random_with_full_budget_finds_true_max():
    cfg = small_config(methods=["random"], budget=60, seeds=1)
    exp = run_experiment(cfg, workers=1)
    info = exp.task_info["s"]
    assert exp.matrix.cells[("s", "random", 0)].final_best == info["true_best_score"]


def test_fd_zoo_not_better_than_zopo_on_monotone_line(tmp_path):
    pool = pool_from_arrays(np.arange(100).reshape(-1, 1) / 10)
    with open(tmp_path / "line.jsonl", "w") as fh:
        dump_pool(pool, fh)
    scores = "".join(json.dumps({"id": c.id, "score": float(c.embedding[0])}) + "\n" for c in pool.candidates)
    (tmp_path / "scores.jsonl").write_text(scores)
    cfg = {
        "seeds": 20, "budget": 60, "init": 10, "methods": ["zopo", "fd-zoo"],
        "optimizer": {"learning_rate": 0.5, "kernel": {"kind": "rbf"},
                      "estimator": {"noise_sigma": 0.0}},
        "tasks": [{"name": "line", "pool": "line.jsonl", "scores": "scores.jsonl"}],
    }
    m = run_experiment(cfg, base_dir=tmp_path, workers=1).matrix
    assert m.complete
    assert m.median("line", "fd-zoo") <= m.median("line", "zopo")


def test_failed_cells_are_recorded_not_fatal(tmp_path):
    cfg = small_config(tasks=[
        {"name": "s", "synthetic": {"family": "rkhs", "d": 4, "pool_size": 60, "seed": 1}},
        {"name": "bad", "pool": "missing.jsonl"},
    ])
    exp = run_experiment(cfg, base_dir=tmp_path, workers=1)
    assert ("bad", "zopo", 0) in exp.matrix.missing()
    assert exp.matrix.cells[("s", "zopo", 0)].status == "ok"
    out = emit_outputs(exp, tmp_path / "out")
    summary = json.loads((out / "summary.json").read_text())
    assert not summary["complete"] and "bad/random/1" in summary["incomplete_cells"]
    assert summary["profile"].startswith("skipped")
    assert (out / "profile.csv").read_text() == "method,tau,rho\n"


def test_emit_outputs_unwritable(tmp_path):
    target = tmp_path / "file"
    target.write_text("x")
    exp = run_experiment(small_config(seeds=1, methods=["random"]), workers=1)
    with pytest.raises(ZopoError, match=str(target)):
        emit_outputs(exp, target / "sub")


def test_bad_configs():
    with pytest.raises(ConfigError):
        run_experiment({"methods": ["zopo"], "tasks": []})
    with pytest.raises(ConfigError):
        run_experiment(small_config(methods=["nope"]))
    with pytest.raises(ConfigError):
        run_experiment(small_config(tasks=[{"name": "a", "synthetic": {}}, {"name": "a", "synthetic": {}}]))


def test_read_results_roundtrip(tmp_path):
    exp = run_experiment(small_config(), workers=1)
    emit_outputs(exp, tmp_path)
    means = read_results(tmp_path / "results.csv")
    assert means["s"]["zopo"] == pytest.approx(exp.matrix.mean("s", "zopo"))
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        read_results(tmp_path / "bad.csv")


def test_pool_embedded_scores_task(tmp_path):
    task = make_synthetic_task("rkhs", d=3, pool_size=40, seed=0, noise_sigma=0.0)
    vals = task.objective.value(task.pool.embeddings)
    pool = pool_from_arrays(task.pool.embeddings, scores=vals)
    with open(tmp_path / "p.jsonl", "w") as fh:
        dump_pool(pool, fh)
    cfg = small_config(methods=["random"], budget=40, seeds=1, tasks=[{"name": "p", "pool": "p.jsonl"}])
    m = run_experiment(cfg, base_dir=tmp_path, workers=1).matrix
    assert m.cells[("p", "random", 0)].final_best == pytest.approx(vals.max())
