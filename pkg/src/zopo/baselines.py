"""Reference methods sharing the optimizer's budget accounting."""

from __future__ import annotations

import numpy as np

from .errors import PoolExhausted
from .optimizer import PROBE, STEP, OptimizerConfig, QueryLoop, RunTrace, make_rngs


def random_search(config: OptimizerConfig, pool, objective, rng=None) -> RunTrace:
    """Sample the pool without replacement until the budget is spent."""
    sel_rng, noise_rng = make_rngs(config.seed) if rng is None else rng
    trace = RunTrace(config=config.to_dict(), method="random")
    loop = QueryLoop(pool, objective, config.budget, noise_rng, trace)
    loop.random_init(config.budget, sel_rng)
    trace.truncated = loop.remaining > 0
    return trace


def fd_zoo_baseline(config: OptimizerConfig, pool, objective, rng=None, h=None) -> RunTrace:
    """Two-point random-direction gradient estimate, projected onto the pool.

    Each step spends three queries: the projections of z + h u and z - h u,
    then the projected ascent step. ``h`` defaults to a tenth of the median
    nearest-neighbour distance in the pool.
    """
    sel_rng, noise_rng = make_rngs(config.seed) if rng is None else rng
    if h is None:
        h = 0.1 * pool.median_nn_distance()
    trace = RunTrace(config=dict(config.to_dict(), fd_step=h), method="fd-zoo")
    loop = QueryLoop(pool, objective, config.budget, noise_rng, trace)
    loop.random_init(config.init_queries, sel_rng)
    z = loop.incumbent()
    d = pool.dimension
    try:
        while loop.remaining > 0:
            u = sel_rng.standard_normal(d)
            u /= np.linalg.norm(u)
            plus = pool.project(z + h * u, exclude=loop.queried)
            r_plus = loop.query(plus, PROBE)
            if loop.remaining <= 0:
                break
            minus = pool.project(z - h * u, exclude=loop.queried)
            r_minus = loop.query(minus, PROBE)
            if loop.remaining <= 0:
                break
            # realised half-displacement of the probe pair along u
            h_eff = 0.5 * float((plus.embedding - minus.embedding) @ u)
            g = (r_plus - r_minus) / (2.0 * h_eff) * u if abs(h_eff) > 1e-12 else np.zeros(d)
            cand = pool.project(z + config.learning_rate * g, exclude=loop.queried)
            loop.query(cand, STEP)
            z = cand.embedding
    except PoolExhausted:
        pass
    trace.truncated = loop.remaining > 0
    return trace
