"""Query history and the GP posterior over the gradient field.

Given observations r_tau = F(z_tau) + noise, the gradient at z is Gaussian
with

    mean = k_t(z)^T (K_t + s^2 I)^-1 r_t
    cov  = k''(z, z) - k_t(z)^T (K_t + s^2 I)^-1 k_t(z)

where rows of k_t(z) are d/dz k(z, z_tau). Only the ``fit_neighbors``
history points closest to z enter the system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import NumericalFailure


class QueryRecord(NamedTuple):
    id: str
    z: np.ndarray
    r: float


@dataclass
class EstimatorConfig:
    noise_sigma: float = 0.01
    fit_neighbors: int = 20
    jitter: float = 1e-8  # relative to the largest diagonal entry of K_t
    uncertainty: str = "trace"  # or "spectral"

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.fit_neighbors < 1:
            raise ValueError("fit_neighbors must be >= 1")
        if self.jitter < 0 or (self.noise_sigma == 0 and self.jitter == 0):
            raise ValueError("jitter must be positive when noise_sigma is 0")
        if self.uncertainty not in ("trace", "spectral"):
            raise ValueError("uncertainty must be 'trace' or 'spectral'")


class History:
    """Append-only record of queries; ids are unique."""

    def __init__(self, dim=None):
        self.dim = dim
        self.records = []
        self._ids = set()
        self._Z = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, cid):
        return cid in self._ids

    @property
    def ids(self):
        return self._ids

    def observe(self, cid, z, r):
        if cid in self._ids:
            raise ValueError(f"candidate {cid!r} already queried")
        z = np.asarray(z, dtype=float).reshape(-1)
        if self.dim is None:
            self.dim = z.shape[0]
        if z.shape[0] != self.dim:
            raise ValueError(f"embedding dimension {z.shape[0]} != history dimension {self.dim}")
        r = float(r)
        if not math.isfinite(r):
            raise ValueError("scores must be finite")
        self.records.append(QueryRecord(cid, z, r))
        self._ids.add(cid)
        self._Z.append(z)
        return self

    def embeddings(self):
        return np.vstack(self._Z) if self._Z else np.empty((0, self.dim or 0))

    def scores(self):
        return np.array([rec.r for rec in self.records])

    def neighbors(self, z, k):
        """Indices of the k records closest to z (stable on ties)."""
        Z = self.embeddings()
        dist = np.sum((Z - np.asarray(z, dtype=float)) ** 2, axis=1)
        return np.argsort(dist, kind="stable")[:k]


@dataclass
class GradientPosterior:
    mean: np.ndarray
    covariance: np.ndarray
    neighborhood_size: int
    condition: float = 1.0


def _cond(A):
    if not np.all(np.isfinite(A)):
        return math.inf
    try:
        return float(np.linalg.cond(A))
    except np.linalg.LinAlgError:
        return math.inf


def _solve_sym(A, B):
    try:
        cf = linalg.cho_factor(A, lower=True, check_finite=False)
        return linalg.cho_solve(cf, B, check_finite=False)
    except linalg.LinAlgError:
        pass
    cond = _cond(A)
    try:
        X = linalg.solve(A, B, assume_a="sym", check_finite=False)
    except (linalg.LinAlgError, ValueError):
        raise NumericalFailure("singular gram system after jitter", condition=cond) from None
    if not np.all(np.isfinite(X)):
        raise NumericalFailure("non-finite solution of gram system", condition=cond)
    return X


def posterior_grad(config: EstimatorConfig, kernel, history: History, z) -> GradientPosterior:
    z = np.asarray(z, dtype=float).reshape(-1)
    prior = kernel.grad12(z, z)
    if len(history) == 0:
        return GradientPosterior(np.zeros(z.shape[0]), 0.5 * (prior + prior.T), 0)
    idx = history.neighbors(z, config.fit_neighbors)
    X = history.embeddings()[idx]
    r = history.scores()[idx]
    K = kernel.gram(X)
    n = len(idx)
    jitter = config.jitter * max(float(np.max(np.diag(K))), 1e-300)
    A = K + (config.noise_sigma**2 + jitter) * np.eye(n)
    G = kernel.grad1_rows(z, X)  # (n, d)
    sol = _solve_sym(A, np.column_stack([r, G]))
    mean = G.T @ sol[:, 0]
    cov = prior - G.T @ sol[:, 1:]
    cov = 0.5 * (cov + cov.T)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NumericalFailure("non-finite gradient posterior", condition=_cond(A))
    return GradientPosterior(mean, cov, n)


def uncertainty(posterior: GradientPosterior, mode="trace") -> float:
    """Scalar spread of the gradient posterior.

    ``trace`` is sqrt(tr(cov) / d); ``spectral`` is sqrt(||cov||_2).
    """
    cov = posterior.covariance
    if mode == "spectral":
        return math.sqrt(max(float(np.linalg.eigvalsh(cov)[-1]), 0.0))
    return math.sqrt(max(float(np.trace(cov)) / cov.shape[0], 0.0))


def gradient_error_bound(d, delta, cov_norm) -> float:
    """High-probability bound on ||mean - grad F||^2: omega * ||cov||_2."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    omega = d + 2.0 * (math.sqrt(d) + 1.0) * math.log(1.0 / delta)
    return omega * cov_norm
