"""Best-so-far vs. queries for zopo, random search and fd-zoo on synthetic rkhs tasks.

Writes results.csv, curves.csv, profile.csv and summary.json under --out and
prints per-task medians plus the mean best-so-far at a few budget checkpoints.
"""

import argparse

from zopo.benchmarks import query_efficiency_config
from zopo.harness import emit_outputs, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/query_efficiency")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--tasks", type=int, default=3)
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()

    exp = run_experiment(query_efficiency_config(args.seeds, args.tasks), workers=args.workers)
    emit_outputs(exp, args.out)
    m = exp.matrix
    checkpoints = (40, 80, 120, 165)
    for t in m.tasks:
        print(t)
        for meth in m.methods:
            curve = m.mean_curve(t, meth)
            at = "  ".join(f"q{q}={curve[min(q, len(curve)) - 1]:.3f}" for q in checkpoints)
            print(f"  {meth:8s} median={m.median(t, meth):.4f}  {at}")


if __name__ == "__main__":
    main()
