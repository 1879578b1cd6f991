"""Localized zeroth-order optimization over a finite pool of embedded candidates."""

from .baselines import fd_zoo_baseline, random_search
from .domain import Candidate, CandidatePool, dump_pool, load_pool, pool_from_arrays
from .errors import ConfigError, EvaluatorError, NumericalFailure, PoolError, PoolExhausted, ZopoError
from .estimator import EstimatorConfig, GradientPosterior, History, gradient_error_bound, posterior_grad, uncertainty
from .harness import emit_outputs, performance_profile, run_experiment
from .kernels import KernelSpec, Matern52Kernel, NTKKernel, RBFKernel, make_kernel, ntk_init
from .objectives import (
    ExternalObjective,
    MLPObjective,
    RKHSObjective,
    TableObjective,
    external_objective,
    make_synthetic_task,
)
from .optimizer import OptimizerConfig, RunTrace, exploration_trigger, local_explore, run

__all__ = [
    "Candidate", "CandidatePool", "ConfigError", "EstimatorConfig", "EvaluatorError", "ExternalObjective",
    "GradientPosterior", "History", "KernelSpec", "MLPObjective", "Matern52Kernel", "NTKKernel",
    "NumericalFailure", "OptimizerConfig", "PoolError", "PoolExhausted", "RBFKernel", "RKHSObjective",
    "RunTrace", "TableObjective", "ZopoError", "dump_pool", "emit_outputs", "exploration_trigger", "gradient_error_bound",
    "external_objective", "fd_zoo_baseline", "load_pool", "local_explore", "make_kernel",
    "make_synthetic_task", "ntk_init", "performance_profile", "pool_from_arrays", "posterior_grad",
    "random_search", "run", "run_experiment", "uncertainty",
]
