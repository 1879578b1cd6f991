"""Black-box score functions over pool candidates.

Four kinds share one interface, ``evaluate(candidate, rng) -> float``:

rkhs      weighted sum of RBF bumps, sum_i w_i exp(-|z - c_i|^2 / 2l^2)
mlp       a random tanh/gelu network evaluated at z
table     precomputed score per candidate id
external  a remote or subprocess scorer reached over a JSON-lines protocol

Synthetic kinds are affinely rescaled so that pool scores span [0, 1];
Gaussian observation noise of standard deviation ``noise_sigma`` is added on
top of the clean value.
"""

from __future__ import annotations

import json
import logging
import math
import os
import queue
import shlex
import subprocess
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .domain import CandidatePool, pool_from_arrays
from .errors import EvaluatorError

log = logging.getLogger(__name__)

TOKEN_ENV = "ZOPO_EVALUATOR_TOKEN"


class Objective:
    kind = "abstract"
    noise_sigma = 0.0

    def clean(self, candidate) -> Optional[float]:
        """Noiseless score, or None when the objective has no clean oracle."""
        raise NotImplementedError

    def evaluate(self, candidate, rng=None) -> float:
        value = self.clean(candidate)
        if self.noise_sigma > 0:
            if rng is None:
                raise ValueError("a random generator is required when noise_sigma > 0")
            value += self.noise_sigma * rng.standard_normal()
        return float(value)

    def fresh(self) -> "Objective":
        """Copy with per-run state reset (caches, connections)."""
        return self


@dataclass
class RKHSObjective(Objective):
    centers: np.ndarray
    weights: np.ndarray
    lengthscale: float
    noise_sigma: float = 0.0
    offset: float = 0.0
    scale: float = 1.0
    kind = "rkhs"

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)

    def raw(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        d2 = np.sum((Z[:, None, :] - self.centers[None, :, :]) ** 2, axis=-1)
        return np.exp(-0.5 * d2 / self.lengthscale**2) @ self.weights

    def value(self, Z):
        return (self.raw(Z) - self.offset) / self.scale

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        u = z[None, :] - self.centers
        k = np.exp(-0.5 * np.sum(u**2, axis=1) / self.lengthscale**2) * self.weights
        return -(u * k[:, None]).sum(axis=0) / self.lengthscale**2 / self.scale

    def clean(self, candidate):
        return float(self.value(candidate.embedding)[0])


@dataclass
class MLPObjective(Objective):
    weights: list
    biases: list
    activation: str = "tanh"
    noise_sigma: float = 0.0
    offset: float = 0.0
    scale: float = 1.0
    kind = "mlp"

    @classmethod
    def random(cls, dim, widths=(32, 32), seed=0, activation="tanh", noise_sigma=0.0):
        rng = np.random.default_rng(seed)
        sizes = (int(dim),) + tuple(widths) + (1,)
        Ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            Ws.append(rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in))
            bs.append(0.1 * rng.standard_normal(fan_out))
        return cls(Ws, bs, activation=activation, noise_sigma=noise_sigma)

    def raw(self, Z):
        from .kernels import ACTIVATIONS

        act = ACTIVATIONS[self.activation]
        a = np.atleast_2d(np.asarray(Z, dtype=float))
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = act(a @ W.T + b)[0]
        return a @ self.weights[-1][0] + self.biases[-1][0]

    def value(self, Z):
        return (self.raw(Z) - self.offset) / self.scale

    def clean(self, candidate):
        return float(self.value(candidate.embedding)[0])


class TableObjective(Objective):
    kind = "table"

    def __init__(self, scores, noise_sigma=0.0):
        self.scores = {str(k): float(v) for k, v in scores.items()}
        self.noise_sigma = float(noise_sigma)
        for cid, s in self.scores.items():
            if not math.isfinite(s):
                raise ValueError(f"score for {cid!r} is not finite")

    @classmethod
    def from_pool(cls, pool: CandidatePool, noise_sigma=0.0):
        if not pool.scores:
            raise EvaluatorError("pool file carries no 'score' fields")
        return cls(pool.scores, noise_sigma)

    @classmethod
    def load(cls, stream, noise_sigma=0.0):
        scores = {}
        for lineno, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                scores[str(rec["id"])] = float(rec["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise EvaluatorError(f"score table line {lineno}: expected {{id, score}}") from None
        return cls(scores, noise_sigma)

    def clean(self, candidate):
        try:
            return self.scores[candidate.id]
        except KeyError:
            raise EvaluatorError(f"score table has no entry for candidate {candidate.id!r}") from None


# ---------------------------------------------------------------------------
# external evaluator


class TransportError(Exception):
    pass


class CallableTransport:
    """Wrap ``fn(request_dict) -> response_dict`` as a transport (test doubles)."""

    def __init__(self, fn: Callable[[dict], dict]):
        self.fn = fn

    def request(self, payload, timeout):
        return self.fn(payload)

    def reset(self):
        pass

    def close(self):
        pass


class SubprocessTransport:
    """One JSON object per line each way over the child's stdin/stdout."""

    def __init__(self, command):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc = None
        self._lines = None

    def _start(self):
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self._lines = queue.Queue()
        proc, lines = self._proc, self._lines

        def pump():
            for line in proc.stdout:
                lines.put(line)
            lines.put(None)

        threading.Thread(target=pump, daemon=True).start()

    def request(self, payload, timeout):
        if self._proc is None or self._proc.poll() is not None:
            self._start()
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.reset()
            raise TransportError(f"evaluator process unavailable: {exc}") from None
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            self.reset()
            raise TransportError(f"evaluator timed out after {timeout}s") from None
        if line is None:
            self.reset()
            raise TransportError("evaluator process closed its output")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError:
            raise TransportError("evaluator wrote malformed JSON") from None
        if not isinstance(resp, dict) or resp.get("id") != payload["id"]:
            self.reset()
            raise TransportError("evaluator response id does not match request")
        return resp

    def reset(self):
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except Exception:
                pass
        self._proc = None

    close = reset


class HttpTransport:
    """POST {"id", "text"} to ``url``; expects 200 with {"score": number}."""

    def __init__(self, url, token_env=TOKEN_ENV):
        self.url = url
        self.token_env = token_env

    def request(self, payload, timeout):
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                status = resp.status
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"evaluator returned HTTP {exc.code}") from None
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(f"evaluator request failed: {type(exc).__name__}") from None
        if status != 200:
            raise TransportError(f"evaluator returned HTTP {status}")
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise TransportError("evaluator returned malformed JSON") from None

    def reset(self):
        pass

    def close(self):
        pass


class ExternalObjective(Objective):
    """Scores candidate texts through a transport, caching by id for one run."""

    kind = "external"

    def __init__(self, transport, timeout=30.0, retries=3, factory=None):
        self.transport = transport
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.noise_sigma = 0.0
        self.cache = {}
        self.requests_sent = 0
        self.retries_used = 0
        self._factory = factory

    def fresh(self):
        if self._factory is None:
            return ExternalObjective(self.transport, self.timeout, self.retries)
        return ExternalObjective(self._factory(), self.timeout, self.retries, self._factory)

    def clean(self, candidate):
        return None

    def evaluate(self, candidate, rng=None):
        if candidate.id in self.cache:
            return self.cache[candidate.id]
        score = external_evaluate(self, candidate)
        self.cache[candidate.id] = score
        return score

    def close(self):
        self.transport.close()


def external_evaluate(obj: ExternalObjective, candidate) -> float:
    if candidate.text is None:
        raise EvaluatorError(f"candidate {candidate.id!r} has no text payload")
    payload = {"id": candidate.id, "text": candidate.text}
    last = None
    for attempt in range(obj.retries + 1):
        if attempt:
            obj.retries_used += 1
            log.warning("retrying evaluator for %s (attempt %d): %s", candidate.id, attempt + 1, last)
        obj.requests_sent += 1
        try:
            resp = obj.transport.request(payload, obj.timeout)
            score = resp["score"]
            if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
                raise TransportError("response score is not a finite number")
        except TransportError as exc:
            last = str(exc)
            continue
        except (KeyError, TypeError):
            last = "response lacks a 'score' field"
            continue
        score = float(score)
        if not 0.0 <= score <= 1.0:
            log.warning("evaluator score %.4g for %s outside [0, 1]; clamping", score, candidate.id)
            score = min(max(score, 0.0), 1.0)
        return score
    raise EvaluatorError(f"evaluator failed for {candidate.id!r} after {obj.retries + 1} attempts: {last}")


def external_objective(endpoint: str, timeout=30.0, retries=3) -> ExternalObjective:
    """``endpoint`` is an http(s) URL or ``cmd:<command line>``."""
    if endpoint.startswith(("http://", "https://")):
        factory = lambda: HttpTransport(endpoint)  # noqa: E731
    elif endpoint.startswith("cmd:"):
        factory = lambda: SubprocessTransport(endpoint[4:])  # noqa: E731
    else:
        raise ValueError("endpoint must be an http(s) URL or 'cmd:<command>'")
    return ExternalObjective(factory(), timeout, retries, factory)


# ---------------------------------------------------------------------------
# synthetic tasks


@dataclass
class SyntheticTask:
    pool: CandidatePool
    objective: Objective
    true_best_id: str
    true_best_score: float
    n_local_optima: int
    meta: dict = field(default_factory=dict)


def local_optima(pool: CandidatePool, values, k=10):
    """Ids whose clean score is >= that of each of their k nearest neighbours."""
    E = pool.embeddings
    sq = np.sum(E**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * E @ E.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    k = min(k, len(pool) - 1)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    values = np.asarray(values)
    is_opt = values >= values[nbrs].max(axis=1)
    return [pool.ids[i] for i in np.flatnonzero(is_opt)]


def mixture_pool(d, pool_size, rng, n_clusters=8, spread=1.0, within=0.35, scale=None):
    """Gaussian-mixture embeddings; ``scale=None`` rescales to mean norm 1."""
    means = spread * rng.standard_normal((n_clusters, d))
    labels = rng.integers(n_clusters, size=pool_size)
    pts = means[labels] + within * rng.standard_normal((pool_size, d))
    if scale is None:
        scale = 1.0 / np.mean(np.linalg.norm(pts, axis=1))
    pts = scale * pts
    means = scale * means
    return pts, means, labels


def _rescale(obj, pool):
    raw = obj.raw(pool.embeddings)
    lo, hi = float(raw.min()), float(raw.max())
    obj.offset = lo
    obj.scale = hi - lo if hi > lo else 1.0
    return obj


def synthetic_objective(
    family,
    pool: CandidatePool,
    seed=0,
    noise_sigma=0.02,
    n_centers=8,
    weights=None,
    matched=True,
    lengthscale=None,
):
    """Build an rkhs or mlp landscape over ``pool``, rescaled to [0, 1] on it.

    rkhs centres sit on randomly chosen pool members with bandwidth equal to
    the median nearest-neighbour distance. The mlp family uses the NTK
    default architecture (tanh, [32, 32]) when ``matched`` and a one-layer
    gelu network otherwise; its weights come from a stream independent of
    any kernel network.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0B1]))
    d = pool.dimension
    if family == "rkhs":
        if weights is None:
            weights = rng.uniform(0.3, 1.0, size=n_centers)
        weights = np.asarray(weights, dtype=float)
        if len(weights) > len(pool):
            raise ValueError("more rkhs centres than pool members")
        picks = rng.choice(len(pool), size=len(weights), replace=False)
        ell = lengthscale if lengthscale is not None else pool.median_nn_distance()
        obj = RKHSObjective(pool.embeddings[picks], weights, ell, noise_sigma=noise_sigma)
        meta = {"lengthscale": float(ell), "weights": weights.tolist()}
    elif family == "mlp":
        widths, act = ((32, 32), "tanh") if matched else ((64,), "gelu")
        # unit-variance pre-activations over the pool
        coord_std = pool.median_pairwise_distance() / math.sqrt(2 * d)
        obj = MLPObjective.random(d, widths, seed=int(rng.integers(2**31)), activation=act, noise_sigma=noise_sigma)
        obj.weights[0] = obj.weights[0] / max(coord_std, 1e-12)
        meta = {"widths": list(widths), "activation": act, "matched": bool(matched)}
    else:
        raise ValueError(f"unknown synthetic family {family!r}")
    _rescale(obj, pool)
    meta.update(family=family, noise_sigma=noise_sigma, seed=seed)
    return obj, meta


def make_synthetic_task(
    family="rkhs",
    d=32,
    pool_size=500,
    seed=0,
    noise_sigma=0.02,
    n_clusters=8,
    k_local=10,
    scale=None,
    **objective_kw,
) -> SyntheticTask:
    """Sample a Gaussian-mixture pool, lay a landscape over it, census it exhaustively."""
    if pool_size < 2:
        raise ValueError("pool_size must be >= 2")
    pool_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    pts, _, _ = mixture_pool(d, pool_size, pool_rng, n_clusters=n_clusters, scale=scale)
    pool = pool_from_arrays(pts)
    obj, meta = synthetic_objective(family, pool, seed=seed, noise_sigma=noise_sigma, **objective_kw)
    values = obj.value(pool.embeddings)
    best = int(np.argmax(values))
    opts = local_optima(pool, values, k=k_local)
    meta.update(d=d, pool_size=pool_size)
    return SyntheticTask(pool, obj, pool.ids[best], float(values[best]), len(opts), meta)
