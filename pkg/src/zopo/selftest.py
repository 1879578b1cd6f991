"""Fast numerical self-checks behind ``zopo selftest``."""

from __future__ import annotations

import numpy as np

from .estimator import EstimatorConfig, History, posterior_grad
from .kernels import Matern52Kernel, NTKKernel, RBFKernel, fd_grad1, fd_grad12, ntk_init
from .objectives import RKHSObjective


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def derivative_errors(kernel, pairs, h1=1e-5, h2=1e-4):
    """Max relative error of grad1 / grad12 against central differences."""
    e1 = max(rel_err(kernel.grad1(z, w), fd_grad1(kernel, z, w, h1)) for z, w in pairs)
    e2 = max(rel_err(kernel.grad12(z, w), fd_grad12(kernel, z, w, h2)) for z, w in pairs)
    return e1, e2


def random_pairs(d, n, scale, seed):
    rng = np.random.default_rng(seed)
    return [(scale * rng.standard_normal(d), scale * rng.standard_normal(d)) for _ in range(n)]


def rkhs_gradient_check(d=4, n_obs=50, n_test=20, seed=0, ell=2.0, noise=0.0):
    """Worst ||mean - grad f|| / (1 + ||grad f||) for an RKHS element with matched kernel.

    Observations fill the unit ball. The default lengthscale is the ball's
    diameter, so 50 points stay dense relative to it up to d=8. Test points
    lie within radius 0.5.
    """
    rng = np.random.default_rng(seed)
    kernel = RBFKernel(d, lengthscale=ell)
    centers = 0.5 * rng.standard_normal((3, d))
    f = RKHSObjective(centers, rng.uniform(0.5, 1.5, 3), ell)
    X = rng.standard_normal((n_obs, d))
    X *= (rng.uniform(0, 1, n_obs) ** (1 / d) / np.linalg.norm(X, axis=1))[:, None]
    hist = History(d)
    for i, x in enumerate(X):
        hist.observe(f"o{i}", x, f.value(x)[0])
    cfg = EstimatorConfig(noise_sigma=noise, fit_neighbors=n_obs, jitter=1e-10)
    worst = 0.0
    T = rng.standard_normal((n_test, d))
    T *= (0.5 * rng.uniform(0, 1, n_test) ** (1 / d) / np.linalg.norm(T, axis=1))[:, None]
    for z in T:
        g = f.gradient(z)
        mu = posterior_grad(cfg, kernel, hist, z).mean
        worst = max(worst, float(np.linalg.norm(mu - g) / (1 + np.linalg.norm(g))))
    return worst


def run_selftest(report=print) -> bool:
    checks = []
    for name, kern, pairs, tol in (
        ("rbf", RBFKernel(4, 1.3), random_pairs(4, 20, 0.7, 1), 1e-5),
        ("matern52", Matern52Kernel(4, 1.3), random_pairs(4, 20, 0.7, 2), 1e-5),
        ("ntk", NTKKernel(ntk_init((16, 16), 4, seed=0)), random_pairs(4, 10, 1.0, 3), 1e-3),
    ):
        e1, e2 = derivative_errors(kern, pairs)
        checks.append((f"{name} grad1 vs finite differences", e1, tol))
        checks.append((f"{name} grad12 vs finite differences", e2, tol))

    # one observation, RBF(1, 1), noiseless: mean = dk(z, z1) r1 / (1 + jitter)
    kern = RBFKernel(2, 1.0)
    hist = History(2).observe("a", np.zeros(2), 2.0)
    z = np.array([1.0, 0.0])
    mu = posterior_grad(EstimatorConfig(noise_sigma=0.0, jitter=1e-10), kern, hist, z).mean
    expected = np.array([-np.exp(-0.5) * 2.0 / (1 + 1e-10), 0.0])
    checks.append(("single-observation posterior mean", rel_err(mu, expected), 1e-12))
    checks.append(("rkhs gradient recovery (d=2)", rkhs_gradient_check(d=2), 0.05))

    ok = True
    for name, err, tol in checks:
        passed = err <= tol
        ok &= passed
        report(f"{'PASS' if passed else 'FAIL'}  {name}: {err:.3g} (tol {tol:g})")
    return ok
