"""Exploration and kernel ablation on the matched-mlp synthetic family.

Compares zopo against zopo-noexplore (local exploration disabled) and
zopo-matern (Matern 5/2 kernel in place of the NTK).
"""

import argparse

from zopo.benchmarks import ablation_config
from zopo.harness import emit_outputs, performance_profile, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--tasks", type=int, default=3)
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()

    exp = run_experiment(ablation_config(args.seeds, args.tasks), workers=args.workers)
    emit_outputs(exp, args.out)
    m = exp.matrix
    print("task      " + "".join(f"{meth:>23s}" for meth in m.methods))
    for t in m.tasks:
        print(f"{t:10s}" + "".join(f"{m.mean(t, meth):14.4f} ± {m.stderr(t, meth):.4f}" for meth in m.methods))
    if m.complete:
        for meth, rows in performance_profile(m, [0.0, 0.05]).items():
            print(f"rho({meth}): " + ", ".join(f"tau={tau:g} {rho:.2f}" for tau, rho in rows))


if __name__ == "__main__":
    main()
