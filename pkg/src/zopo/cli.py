"""Command-line entry point: optimize, bench, profile, selftest.

Exit status: 0 success, 1 usage error, 2 run-fatal error, 3 selftest failure.
The HTTP evaluator reads a bearer token from $ZOPO_EVALUATOR_TOKEN.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, ZopoError
from .harness import (
    DEFAULT_TAUS,
    METHODS,
    emit_outputs,
    load_config,
    performance_profile,
    profile_csv,
    read_results,
    run_experiment,
)
from .kernels import KERNEL_KINDS

EXIT_OK, EXIT_USAGE, EXIT_FATAL, EXIT_SELFTEST = 0, 1, 2, 3

log = logging.getLogger("zopo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _taus(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}") from None


def build_parser():
    p = _Parser(prog="zopo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    o = sub.add_parser("optimize", help="run one method on one pool")
    o.add_argument("--config", help="JSON file with defaults for any flag below")
    o.add_argument("--pool", help="line-delimited JSON pool file")
    o.add_argument("--objective", help="table | external | synthetic:FAMILY[,key=value...]")
    o.add_argument("--scores", help="separate {id, score} table file")
    o.add_argument("--endpoint", help="external evaluator: http(s) URL or cmd:COMMAND")
    o.add_argument("--timeout", type=float)
    o.add_argument("--retries", type=int)
    o.add_argument("--method", choices=METHODS)
    o.add_argument("--budget", type=int)
    o.add_argument("--init", type=int)
    o.add_argument("--seed", type=int)
    o.add_argument("--out")
    o.add_argument("--lr", type=float)
    o.add_argument("--lambda", dest="lam", type=float)
    o.add_argument("--xi", type=int)
    o.add_argument("--n-local", dest="n_local", type=int)
    o.add_argument("--knn-fit", dest="knn_fit", type=int)
    o.add_argument("--kernel", choices=KERNEL_KINDS)
    o.add_argument("--noise", type=float, help="observation noise sigma assumed by the estimator")

    b = sub.add_parser("bench", help="run an experiment config")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--workers", type=int)

    pr = sub.add_parser("profile", help="performance profile from results.csv")
    pr.add_argument("--results", required=True)
    pr.add_argument("--taus", type=_taus, default=list(DEFAULT_TAUS))
    pr.add_argument("--out", required=True)

    sub.add_parser("selftest", help="kernel derivative and posterior oracle checks")
    return p


OPTIMIZE_DEFAULTS = {"method": "zopo", "budget": 165, "init": 40, "seed": 0, "timeout": 30.0, "retries": 3}


def _parse_synthetic(spec):
    # "rkhs,d=8,pool_size=200,seed=1" -> ("rkhs", {...})
    parts = [s for s in spec.split(",") if s]
    if not parts:
        raise UsageError("synthetic objective needs a family, e.g. synthetic:rkhs")
    kw = {}
    for item in parts[1:]:
        if "=" not in item:
            raise UsageError(f"bad synthetic option {item!r}; expected key=value")
        k, v = item.split("=", 1)
        try:
            kw[k] = json.loads(v)
        except json.JSONDecodeError:
            kw[k] = v
    return parts[0], kw


def _optimize_experiment(args):
    opts = dict(OPTIMIZE_DEFAULTS)
    if args.config:
        opts.update(load_config(args.config))
    opts.update({k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config", "verbose")})
    if not opts.get("objective"):
        raise UsageError("--objective is required")
    if not opts.get("out"):
        raise UsageError("--out is required")
    objective = opts["objective"]
    task = {"name": "task"}
    synthetic_seed = opts["seed"]
    if objective.startswith("synthetic:"):
        family, kw = _parse_synthetic(objective[len("synthetic:"):])
        kw.setdefault("seed", synthetic_seed)
        if opts.get("pool"):
            task.update(pool=str(Path(opts["pool"]).resolve()), objective=dict(family=family, **kw))
        else:
            task["synthetic"] = dict(family=family, **kw)
    elif objective in ("table", "external"):
        if not opts.get("pool"):
            raise UsageError(f"--pool is required for the {objective} objective")
        task["pool"] = str(Path(opts["pool"]).resolve())
        if objective == "external":
            if not opts.get("endpoint"):
                raise UsageError("--endpoint is required for the external objective")
            task["external"] = {"endpoint": opts["endpoint"], "timeout": opts["timeout"], "retries": opts["retries"]}
        elif opts.get("scores"):
            task["scores"] = str(Path(opts["scores"]).resolve())
    else:
        raise UsageError(f"unknown objective {objective!r}")

    optimizer = {}
    for flag, key in (("lr", "learning_rate"), ("lam", "lam"), ("xi", "xi"), ("n_local", "n_local")):
        if opts.get(flag) is not None:
            optimizer[key] = opts[flag]
    if opts.get("kernel"):
        optimizer["kernel"] = {"kind": opts["kernel"]}
    est = {}
    if opts.get("knn_fit") is not None:
        est["fit_neighbors"] = opts["knn_fit"]
    if opts.get("noise") is not None:
        est["noise_sigma"] = opts["noise"]
    if est:
        optimizer["estimator"] = est
    config = {
        "master_seed": opts["seed"],
        "seeds": 1,
        "budget": opts["budget"],
        "init": opts["init"],
        "methods": [opts["method"]],
        "optimizer": optimizer,
        "tasks": [task],
    }
    return config, opts["out"]


def cmd_optimize(args):
    config, out = _optimize_experiment(args)
    exp = run_experiment(config, workers=1)
    bad = exp.matrix.missing()
    emit_outputs(exp, out)
    if bad:
        status = exp.matrix.cells[bad[0]].status
        raise ZopoError(f"run failed: {status}")
    cell = next(iter(exp.matrix.cells.values()))
    print(json.dumps({"best_id": cell.trace["best_id"], "best_score": cell.trace["best_score"],
                      "final_best": cell.final_best, "queries_used": cell.queries_used,
                      "truncated": cell.truncated}))
    return EXIT_OK


def cmd_bench(args):
    config = load_config(args.config)
    exp = run_experiment(config, base_dir=Path(args.config).resolve().parent, workers=args.workers)
    emit_outputs(exp, args.out)
    m = exp.matrix
    for t in m.tasks:
        row = "  ".join(f"{meth}={m.mean(t, meth):.4f}" for meth in m.methods if len(m.scores(t, meth)))
        print(f"{t}: {row}")
    if not m.complete:
        print(f"incomplete cells: {len(m.missing())}", file=sys.stderr)
    return EXIT_OK


def cmd_profile(args):
    means = read_results(args.results)
    prof = performance_profile(means, args.taus)
    Path(args.out).write_text(profile_csv(prof))
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest

    ok = run_selftest(print)
    return EXIT_OK if ok else EXIT_SELFTEST


COMMANDS = {"optimize": cmd_optimize, "bench": cmd_bench, "profile": cmd_profile, "selftest": cmd_selftest}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"zopo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ZopoError, ConfigError, OSError, ValueError) as exc:
        print(f"zopo: fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
