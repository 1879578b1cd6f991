"""Experiment configs for the desk-scale synthetic benchmarks.

Both use 500-member pools in d=32 with observation noise 0.02, a budget of
165 queries of which 40 are random initialisation, and 20 seeds per cell.
"""

BUDGET, INIT, SEEDS = 165, 40, 20


def synthetic_tasks(family, n_tasks=3, d=32, pool_size=500, noise_sigma=0.02, **kw):
    return [
        {"name": f"{family}-{s}",
         "synthetic": dict(family=family, d=d, pool_size=pool_size, seed=s, noise_sigma=noise_sigma, **kw)}
        for s in range(n_tasks)
    ]


def query_efficiency_config(seeds=SEEDS, n_tasks=3, methods=("zopo", "random", "fd-zoo")):
    return {"master_seed": 0, "seeds": seeds, "budget": BUDGET, "init": INIT,
            "methods": list(methods), "tasks": synthetic_tasks("rkhs", n_tasks)}


def ablation_config(seeds=SEEDS, n_tasks=3, methods=("zopo", "zopo-noexplore", "zopo-matern")):
    return {"master_seed": 0, "seeds": seeds, "budget": BUDGET, "init": INIT,
            "methods": list(methods), "tasks": synthetic_tasks("mlp", n_tasks, matched=True)}
