"""Localized zeroth-order search over a candidate pool.

One run:

1. query ``init_queries`` distinct candidates uniformly at random;
2. start the incumbent at the best of them;
3. until the budget or the pool runs out: estimate the gradient posterior at
   the incumbent; if its uncertainty has stayed >= ``lam`` over the last
   ``xi + 1`` steps, query the ``n_local`` nearest unqueried neighbours and
   re-estimate; then project ``z + lr * mean`` onto the unqueried pool,
   query that candidate and move the incumbent there (even if worse);
4. return the best candidate observed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalFailure, PoolExhausted
from .estimator import EstimatorConfig, History, posterior_grad, uncertainty
from .kernels import KernelSpec, make_kernel

log = logging.getLogger(__name__)

INIT, STEP, EXPLORE, PROBE = "init", "gradient-step", "exploration", "probe"


@dataclass
class OptimizerConfig:
    budget: int = 165
    init_queries: int = 40
    learning_rate: float = 0.01
    lam: float = 0.1
    xi: int = 5
    n_local: int = 10
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.estimator, dict):
            self.estimator = EstimatorConfig(**self.estimator)
        if isinstance(self.kernel, dict):
            self.kernel = KernelSpec(**self.kernel)
        if not 0 < self.init_queries <= self.budget:
            raise ValueError("require 0 < init_queries <= budget")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lam < 0 or self.xi < 0 or self.n_local < 1:
            raise ValueError("require lam >= 0, xi >= 0, n_local >= 1")

    def to_dict(self):
        d = asdict(self)
        d["kernel"]["widths"] = list(d["kernel"]["widths"])
        if math.isinf(d["lam"]):
            d["lam"] = "inf"
        return d


@dataclass
class TraceEntry:
    step: int
    id: str
    score: float
    best_so_far: float
    flag: str
    uncertainty: Optional[float] = None
    clean: Optional[float] = None


@dataclass
class RunTrace:
    entries: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    method: str = "zopo"
    truncated: bool = False
    fallbacks: int = 0

    @property
    def queries_used(self):
        return len(self.entries)

    @property
    def best(self) -> Optional[TraceEntry]:
        best = None
        for e in self.entries:
            if best is None or e.score > best.score:
                best = e
        return best

    @property
    def best_id(self):
        return self.best.id if self.entries else None

    @property
    def best_score(self):
        return self.best.score if self.entries else float("-inf")

    @property
    def final_best(self):
        """Clean score of the returned candidate when known, else its observed score."""
        b = self.best
        if b is None:
            return float("nan")
        return b.clean if b.clean is not None else b.score

    def flags(self):
        return [e.flag for e in self.entries]

    def to_dict(self):
        return {
            "method": self.method,
            "config": self.config,
            "truncated": self.truncated,
            "fallbacks": self.fallbacks,
            "queries_used": self.queries_used,
            "best_id": self.best_id,
            "best_score": self.best_score if self.entries else None,
            "final_best": self.final_best if self.entries else None,
            "entries": [asdict(e) for e in self.entries],
        }


class QueryLoop:
    """Budget-checked query bookkeeping shared by ZOPO and the baselines."""

    def __init__(self, pool, objective, budget, noise_rng, trace):
        self.pool = pool
        self.objective = objective
        self.budget = budget
        self.noise_rng = noise_rng
        self.trace = trace
        self.history = History(pool.dimension)

    @property
    def remaining(self):
        return self.budget - len(self.history)

    @property
    def queried(self):
        return self.history.ids

    def query(self, cand, flag, unc=None):
        if self.remaining <= 0:
            raise RuntimeError("query budget exceeded")
        r = self.objective.evaluate(cand, self.noise_rng)
        self.history.observe(cand.id, cand.embedding, r)
        prev = self.trace.entries[-1].best_so_far if self.trace.entries else -math.inf
        self.trace.entries.append(
            TraceEntry(
                step=len(self.trace.entries),
                id=cand.id,
                score=r,
                best_so_far=max(prev, r),
                flag=flag,
                uncertainty=unc,
                clean=self.objective.clean(cand),
            )
        )
        return r

    def random_init(self, n, rng):
        n = min(n, self.remaining, len(self.pool))
        for i in rng.choice(len(self.pool), size=n, replace=False):
            self.query(self.pool.candidates[int(i)], INIT)

    def incumbent(self):
        """Embedding of the best-scoring queried candidate."""
        best = max(self.history.records, key=lambda rec: rec.r)
        return best.z


def make_rngs(seed):
    """Independent (selection, noise) generators from one integer seed."""
    sel, noise = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(sel), np.random.default_rng(noise)


def exploration_trigger(window, lam, xi) -> bool:
    """True iff ``xi + 1`` uncertainties are recorded and the last ``xi + 1`` are all >= lam."""
    window = list(window)
    if len(window) < xi + 1:
        return False
    return all(u >= lam for u in window[len(window) - (xi + 1) :])


def local_explore(loop: QueryLoop, z, n_local, unc=None):
    """Query the ``n_local`` nearest unqueried candidates to ``z`` in distance order."""
    n = min(n_local, loop.remaining)
    if n <= 0:
        return []
    nbrs = loop.pool.nearest(z, n, exclude=loop.queried)
    for cand in nbrs:
        loop.query(cand, EXPLORE, unc)
    return [loop.history.records[-len(nbrs) + i] for i in range(len(nbrs))]


def run(config: OptimizerConfig, pool, objective, rng=None, kernel=None, method="zopo") -> RunTrace:
    if len(pool) < config.init_queries:
        raise ValueError("pool is smaller than init_queries")
    sel_rng, noise_rng = make_rngs(config.seed) if rng is None else rng
    if kernel is None:
        kernel = make_kernel(config.kernel, pool.dimension, pool)
    trace = RunTrace(config=config.to_dict(), method=method)
    loop = QueryLoop(pool, objective, config.budget, noise_rng, trace)
    loop.random_init(config.init_queries, sel_rng)
    z = loop.incumbent()
    est = config.estimator
    window = []

    while loop.remaining > 0:
        try:
            post = posterior_grad(est, kernel, loop.history, z)
            unc = uncertainty(post, est.uncertainty)
            window.append(unc)
            if exploration_trigger(window, config.lam, config.xi):
                window = []
                local_explore(loop, z, config.n_local, unc)
                if loop.remaining <= 0:
                    break
                post = posterior_grad(est, kernel, loop.history, z)
                unc = uncertainty(post, est.uncertainty)
            target = z + config.learning_rate * post.mean
        except NumericalFailure as exc:
            log.warning("gradient estimate failed (cond=%s); querying nearest unqueried", exc.condition)
            trace.fallbacks += 1
            target, unc = z, None
        try:
            cand = pool.project(target, exclude=loop.queried)
        except PoolExhausted:
            trace.truncated = True
            break
        loop.query(cand, STEP, unc)
        z = cand.embedding

    if loop.remaining > 0:
        trace.truncated = True
    return trace
