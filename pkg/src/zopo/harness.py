"""Method-vs-baseline experiments, performance profiles and CSV/JSON outputs.

An experiment config is a JSON document::

    {
      "master_seed": 0,
      "seeds": 20,
      "budget": 165,
      "init": 40,
      "methods": ["zopo", "random"],
      "optimizer": {"learning_rate": 0.01, "kernel": {"kind": "ntk"}},
      "method_overrides": {"zopo": {"xi": 3}},
      "taus": [0, 0.01, 0.02, 0.05, 0.1, 0.2],
      "workers": 1,
      "tasks": [
        {"name": "rkhs-0", "synthetic": {"family": "rkhs", "d": 32, "pool_size": 500, "seed": 0}},
        {"name": "mine", "pool": "pool.jsonl", "scores": "scores.jsonl"},
        {"name": "remote", "pool": "pool.jsonl", "external": {"endpoint": "http://..."}}
      ]
    }

Relative file paths resolve against the config file's directory.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .domain import load_pool
from .errors import ConfigError, ZopoError
from .objectives import (
    TableObjective,
    external_objective,
    make_synthetic_task,
    synthetic_objective,
)
from .optimizer import OptimizerConfig, run

log = logging.getLogger(__name__)

METHODS = ("zopo", "zopo-matern", "zopo-noexplore", "random", "fd-zoo")
DEFAULT_TAUS = (0.0, 0.01, 0.02, 0.05, 0.1, 0.2)
# profile comparisons r* - r <= tau absorb float round-off of this size
PROFILE_ATOL = 1e-12


def method_config(tag, base: dict) -> OptimizerConfig:
    """Resolve a method tag plus override dict into an optimizer config."""
    if tag not in METHODS:
        raise ConfigError(f"unknown method {tag!r}; choose from {', '.join(METHODS)}")
    cfg = copy.deepcopy(base)
    kernel = dict(cfg.pop("kernel", {}) or {})
    if tag == "zopo-matern":
        kernel["kind"] = "matern52"
    if tag == "zopo-noexplore":
        cfg["lam"] = math.inf
    if isinstance(cfg.get("lam"), str):
        cfg["lam"] = float(cfg["lam"])
    try:
        return OptimizerConfig(kernel=kernel, **cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid optimizer settings for {tag}: {exc}") from None


def run_method(tag, config: OptimizerConfig, pool, objective):
    if tag == "random":
        return baselines.random_search(config, pool, objective)
    if tag == "fd-zoo":
        return baselines.fd_zoo_baseline(config, pool, objective)
    return run(config, pool, objective, method=tag)


def cell_seed(master_seed, task_name, seed_index) -> int:
    """Per-cell seed; shared across methods so that they see the same draws."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(task_name.encode()), int(seed_index)])
    return int(ss.generate_state(1)[0])


def build_task(spec: dict, base_dir="."):
    """Return (pool, objective, info) for one task entry."""
    base_dir = Path(base_dir)
    if "synthetic" in spec:
        task = make_synthetic_task(**spec["synthetic"])
        info = {"true_best_id": task.true_best_id, "true_best_score": task.true_best_score,
                "n_local_optima": task.n_local_optima}
        return task.pool, task.objective, info
    if "pool" not in spec:
        raise ConfigError(f"task {spec.get('name')!r} needs 'synthetic' or 'pool'")
    with open(base_dir / spec["pool"], encoding="utf-8") as fh:
        pool = load_pool(fh, spec.get("dimension"))
    noise = float(spec.get("noise_sigma", 0.0))
    if "external" in spec:
        ext = spec["external"]
        obj = external_objective(ext["endpoint"], ext.get("timeout", 30.0), ext.get("retries", 3))
    elif "objective" in spec:
        fam = dict(spec["objective"])
        obj, _ = synthetic_objective(fam.pop("family"), pool, **fam)
    elif "scores" in spec:
        with open(base_dir / spec["scores"], encoding="utf-8") as fh:
            obj = TableObjective.load(fh, noise)
    else:
        obj = TableObjective.from_pool(pool, noise)
    return pool, obj, {}


@dataclass
class CellResult:
    task: str
    method: str
    seed: int
    status: str = "ok"
    final_best: float = float("nan")
    queries_used: int = 0
    truncated: bool = False
    curve: list = field(default_factory=list)
    trace: dict = field(default_factory=dict)


def _run_task_cells(job):
    """Run every (method, seed) cell of one task; the task is built once."""
    task_spec, methods, seeds, base, overrides, master, base_dir = job
    name = task_spec["name"]
    try:
        pool, objective, info = build_task(task_spec, base_dir)
    except (ZopoError, OSError, ValueError, KeyError, TypeError) as exc:
        err = f"error: task setup failed: {exc}"
        return [CellResult(name, m, s, status=err) for m in methods for s in range(seeds)], {}
    out = []
    for m in methods:
        for s in range(seeds):
            cfg_dict = dict(copy.deepcopy(base), **copy.deepcopy(overrides.get(m, {})))
            cfg_dict["seed"] = cell_seed(master, name, s)
            try:
                cfg = method_config(m, cfg_dict)
                trace = run_method(m, cfg, pool, objective.fresh())
            except (ZopoError, ValueError) as exc:
                log.error("cell %s/%s/%d failed: %s", name, m, s, exc)
                out.append(CellResult(name, m, s, status=f"error: {exc}"))
                continue
            out.append(CellResult(
                name, m, s,
                final_best=trace.final_best,
                queries_used=trace.queries_used,
                truncated=trace.truncated,
                curve=[e.best_so_far for e in trace.entries],
                trace=trace.to_dict(),
            ))
    return out, info


class ResultMatrix:
    def __init__(self, tasks, methods, seeds, cells):
        self.tasks = list(tasks)
        self.methods = list(methods)
        self.seeds = int(seeds)
        self.cells = {(c.task, c.method, c.seed): c for c in cells}

    def missing(self):
        out = []
        for t in self.tasks:
            for m in self.methods:
                for s in range(self.seeds):
                    c = self.cells.get((t, m, s))
                    if c is None or c.status != "ok":
                        out.append((t, m, s))
        return out

    @property
    def complete(self):
        return not self.missing()

    def scores(self, task, method):
        return np.array([self.cells[(task, method, s)].final_best for s in range(self.seeds)
                         if (task, method, s) in self.cells and self.cells[(task, method, s)].status == "ok"])

    def mean(self, task, method):
        return float(np.mean(self.scores(task, method)))

    def median(self, task, method):
        return float(np.median(self.scores(task, method)))

    def stderr(self, task, method):
        x = self.scores(task, method)
        return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0

    def means(self):
        return {t: {m: self.mean(t, m) for m in self.methods} for t in self.tasks}

    def mean_curve(self, task, method):
        curves = [self.cells[(task, method, s)].curve for s in range(self.seeds)]
        n = max(len(c) for c in curves)
        padded = [c + [c[-1]] * (n - len(c)) for c in curves if c]
        return np.mean(padded, axis=0)


def performance_profile(matrix, taus=DEFAULT_TAUS):
    """rho_m(tau): fraction of tasks where method m's mean is within tau of the best mean.

    ``matrix`` is a ResultMatrix or a mapping task -> {method: mean score}.
    """
    if isinstance(matrix, ResultMatrix):
        missing = matrix.missing()
        if missing:
            listed = ", ".join(f"{t}/{m}/{s}" for t, m, s in missing[:20])
            raise ConfigError(f"result matrix incomplete ({len(missing)} cells): {listed}")
        means = matrix.means()
        methods = matrix.methods
    else:
        means = {t: dict(v) for t, v in matrix.items()}
        methods = sorted({m for v in means.values() for m in v})
        gaps = [(t, m) for t in means for m in methods if m not in means[t]]
        if gaps:
            raise ConfigError("result matrix incomplete: " + ", ".join(f"{t}/{m}" for t, m in gaps))
    taus = [float(t) for t in taus]
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise ValueError("taus must be ascending")
    tasks = list(means)
    best = {t: max(means[t].values()) for t in tasks}
    profile = {}
    for m in methods:
        gaps = [best[t] - means[t][m] for t in tasks]
        profile[m] = [(tau, sum(g <= tau + PROFILE_ATOL for g in gaps) / len(tasks)) for tau in taus]
    return profile


@dataclass
class Experiment:
    config: dict
    matrix: ResultMatrix
    task_info: dict

    @property
    def config_hash(self):
        return config_hash(self.config)


def config_hash(config) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _resolve(config: dict):
    for key in ("tasks", "methods"):
        if not config.get(key):
            raise ConfigError(f"experiment config needs a non-empty {key!r}")
    names = [t.get("name") for t in config["tasks"]]
    if None in names or len(set(names)) != len(names):
        raise ConfigError("every task needs a unique 'name'")
    for m in config["methods"]:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    base = dict(config.get("optimizer", {}))
    if "budget" in config:
        base["budget"] = int(config["budget"])
    if "init" in config:
        base["init_queries"] = int(config["init"])
    return base


def run_experiment(config: dict, base_dir=".", workers=None) -> Experiment:
    base = _resolve(config)
    methods = list(config["methods"])
    seeds = int(config.get("seeds", 1))
    master = int(config.get("master_seed", 0))
    overrides = config.get("method_overrides", {})
    if workers is None:
        has_external = any("external" in t for t in config["tasks"])
        workers = int(config.get("workers", 1 if has_external else (os.cpu_count() or 1)))
    jobs = [(t, methods, seeds, base, overrides, master, str(base_dir)) for t in config["tasks"]]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_task_cells, jobs))
    else:
        results = [_run_task_cells(j) for j in jobs]
    cells, info = [], {}
    for t, (res, inf) in zip(config["tasks"], results):
        cells.extend(res)
        info[t["name"]] = inf
    matrix = ResultMatrix([t["name"] for t in config["tasks"]], methods, seeds, cells)
    return Experiment(config, matrix, info)


def _fmt(x):
    return repr(float(x))


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def profile_csv(profile) -> str:
    rows = [(m, _fmt(tau), _fmt(rho)) for m in sorted(profile) for tau, rho in profile[m]]
    return _csv(rows, ["method", "tau", "rho"])


def emit_outputs(exp: Experiment, out_dir, taus=None, write_traces=True):
    """Write results.csv, curves.csv, profile.csv, summary.json and traces/."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ZopoError(f"cannot write to output directory {out}: {exc}") from None
    m = exp.matrix
    keys = sorted(m.cells)
    ok = [m.cells[k] for k in keys if m.cells[k].status == "ok"]
    (out / "results.csv").write_text(_csv(
        [(c.task, c.method, c.seed, _fmt(c.final_best), c.queries_used) for c in ok],
        ["task", "method", "seed", "final_best", "queries_used"]))
    (out / "curves.csv").write_text(_csv(
        [(c.task, c.method, c.seed, i, _fmt(v)) for c in ok for i, v in enumerate(c.curve)],
        ["task", "method", "seed", "step", "best_so_far"]))
    taus = list(taus if taus is not None else exp.config.get("taus", DEFAULT_TAUS))
    profile_status = "ok"
    try:
        prof = performance_profile(m, taus)
        (out / "profile.csv").write_text(profile_csv(prof))
    except ConfigError as exc:
        profile_status = f"skipped: {exc}"
        (out / "profile.csv").write_text(_csv([], ["method", "tau", "rho"]))
    cells = {f"{t}/{meth}/{s}": {"status": c.status, "truncated": c.truncated, "queries_used": c.queries_used}
             for (t, meth, s), c in sorted(m.cells.items())}
    out_of_range = [f"{c.task}/{c.method}/{c.seed}" for c in ok if not 0.0 <= c.final_best <= 1.0]
    summary = {
        "config_hash": exp.config_hash,
        "complete": m.complete,
        "incomplete_cells": [f"{t}/{meth}/{s}" for t, meth, s in m.missing()],
        "profile": profile_status,
        "scores_outside_unit_interval": out_of_range,
        "tasks": {t: {"info": exp.task_info.get(t, {}),
                      "methods": {meth: {"mean": m.mean(t, meth), "stderr": m.stderr(t, meth),
                                         "median": m.median(t, meth)}
                                  for meth in m.methods if len(m.scores(t, meth))}}
                  for t in m.tasks},
        "cells": cells,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if write_traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for c in ok:
            path = tdir / f"{_safe(c.task)}__{c.method}__{c.seed}.json"
            path.write_text(json.dumps(c.trace, sort_keys=True) + "\n")
    return out


def _safe(name):
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def read_results(path):
    """results.csv -> mapping task -> method -> mean final_best."""
    acc = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                score = float(row["final_best"])
                acc.setdefault(row["task"], {}).setdefault(row["method"], []).append(score)
            except (KeyError, TypeError, ValueError):
                raise ConfigError(f"{path}:{lineno}: expected task,method,seed,final_best columns") from None
    if not acc:
        raise ConfigError(f"{path}: no result rows")
    return {t: {m: float(np.mean(v)) for m, v in ms.items()} for t, ms in acc.items()}


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
