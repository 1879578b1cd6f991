"""Finite embedded search domain: candidates, pool ingestion, projection.

A pool is immutable once built. Nearest-neighbour queries are exact brute
force over the embedding matrix, with deterministic tie-breaking on the
lexicographically smallest id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .errors import PoolError, PoolExhausted

# Distances closer than this (relative) are treated as ties.
TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Candidate:
    id: str
    embedding: np.ndarray
    text: Optional[str] = None

    def __post_init__(self):
        emb = np.array(self.embedding, dtype=float).reshape(-1)
        if not np.all(np.isfinite(emb)):
            raise PoolError(f"candidate {self.id!r} has non-finite embedding entries")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)

    def __repr__(self):
        return f"Candidate(id={self.id!r}, d={self.embedding.shape[0]})"


@dataclass(frozen=True, eq=False)
class CandidatePool:
    """The search domain: ordered candidates plus their embedding matrix.

    ``scores`` carries the optional per-record "score" field from the pool
    file; only the table objective reads it.
    """

    candidates: tuple
    dimension: int
    dropped: int = 0
    scores: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.candidates:
            raise PoolError("pool is empty")
        ids = [c.id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise PoolError("candidate ids are not unique")
        for c in self.candidates:
            if c.embedding.shape[0] != self.dimension:
                raise PoolError(
                    f"candidate {c.id!r} has dimension {c.embedding.shape[0]}, "
                    f"expected {self.dimension}"
                )
        emb = np.vstack([c.embedding for c in self.candidates])
        emb.setflags(write=False)
        order = sorted(range(len(ids)), key=ids.__getitem__)
        id_rank = np.empty(len(ids), dtype=np.int64)
        id_rank[order] = np.arange(len(ids))
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "ids", tuple(ids))
        object.__setattr__(self, "_id_rank", id_rank)
        object.__setattr__(self, "_index", {cid: i for i, cid in enumerate(ids)})

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __contains__(self, cid):
        return cid in self._index

    def __getitem__(self, cid) -> Candidate:
        return self.candidates[self._index[cid]]

    def index_of(self, cid) -> int:
        return self._index[cid]

    def _distances(self, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape[0] != self.dimension:
            raise PoolError(f"query has dimension {z.shape[0]}, pool has {self.dimension}")
        if not np.all(np.isfinite(z)):
            raise PoolError("query point has non-finite entries")
        return np.sqrt(np.sum((self.embeddings - z) ** 2, axis=1))

    def _mask(self, exclude):
        mask = np.ones(len(self), dtype=bool)
        for cid in exclude or ():
            i = self._index.get(cid)
            if i is not None:
                mask[i] = False
        return mask

    def ranking(self, z, exclude: Iterable[str] = ()) -> np.ndarray:
        """Indices of non-excluded candidates by ascending distance to ``z``."""
        dist = self._distances(z)
        idx = np.flatnonzero(self._mask(exclude))
        if idx.size == 0:
            return idx
        order = idx[np.lexsort((self._id_rank[idx], dist[idx]))]
        return _break_near_ties(order, dist, self._id_rank)

    def project(self, z, exclude: Iterable[str] = ()) -> Candidate:
        """Closest non-excluded candidate to ``z`` (smallest id on ties)."""
        dist = self._distances(z)
        mask = self._mask(exclude)
        if not mask.any():
            raise PoolExhausted("all candidates are excluded")
        best = dist[mask].min()
        tol = TIE_RTOL * max(1.0, best)
        tied = np.flatnonzero(mask & (dist <= best + tol))
        return self.candidates[tied[np.argmin(self._id_rank[tied])]]

    def nearest(self, z, k: int, exclude: Iterable[str] = ()) -> list:
        if k < 1:
            raise ValueError("k must be >= 1")
        return [self.candidates[i] for i in self.ranking(z, exclude)[:k]]

    def median_pairwise_distance(self, max_points=1000, seed=0) -> float:
        emb = self.embeddings
        if len(emb) > max_points:
            emb = emb[np.random.default_rng(seed).choice(len(emb), max_points, replace=False)]
        sq = np.sum(emb**2, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * emb @ emb.T, 0.0)
        iu = np.triu_indices(len(emb), k=1)
        if iu[0].size == 0:
            return 1.0
        return float(np.median(np.sqrt(d2[iu])))

    def median_nn_distance(self) -> float:
        emb = self.embeddings
        if len(emb) < 2:
            return 1.0
        sq = np.sum(emb**2, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * emb @ emb.T, 0.0)
        np.fill_diagonal(d2, np.inf)
        return float(np.median(np.sqrt(d2.min(axis=1))))


def _break_near_ties(order, dist, id_rank):
    # Group runs of near-equal distance and reorder each run by id.
    out = order.copy()
    n = len(order)
    i = 0
    while i < n:
        start = dist[order[i]]
        tol = TIE_RTOL * max(1.0, start)
        j = i + 1
        while j < n and dist[order[j]] - start <= tol:
            j += 1
        if j - i > 1:
            group = order[i:j]
            out[i:j] = group[np.argsort(id_rank[group], kind="stable")]
        i = j
    return out


def make_pool(candidates: Sequence[Candidate], scores=None) -> CandidatePool:
    if not candidates:
        raise PoolError("pool is empty")
    return CandidatePool(tuple(candidates), candidates[0].embedding.shape[0], scores=dict(scores or {}))


def pool_from_arrays(embeddings, ids=None, texts=None, scores=None) -> CandidatePool:
    emb = np.atleast_2d(np.asarray(embeddings, dtype=float))
    n = emb.shape[0]
    width = len(str(max(n - 1, 0)))
    ids = list(ids) if ids is not None else [f"c{i:0{width}d}" for i in range(n)]
    texts = list(texts) if texts is not None else [None] * n
    cands = [Candidate(ids[i], emb[i], texts[i]) for i in range(n)]
    score_map = {}
    if scores is not None:
        score_map = {ids[i]: float(s) for i, s in enumerate(scores)}
    return CandidatePool(tuple(cands), emb.shape[1], scores=score_map)


def load_pool(stream: IO[str], dimension_hint: Optional[int] = None) -> CandidatePool:
    """Read a line-delimited JSON pool.

    Records repeating an earlier id or an earlier embedding exactly are
    dropped (first occurrence wins); the count is kept on ``pool.dropped``.
    """
    dimension = dimension_hint
    cands = []
    scores = {}
    seen_ids = set()
    seen_emb = set()
    dropped = 0
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PoolError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or "id" not in rec or "embedding" not in rec:
            raise PoolError(f"line {lineno}: record needs 'id' and 'embedding'")
        cid = str(rec["id"])
        emb = rec["embedding"]
        if not isinstance(emb, list) or not all(isinstance(x, (int, float)) for x in emb):
            raise PoolError(f"line {lineno}: record {cid!r} embedding must be a list of numbers")
        if not all(math.isfinite(x) for x in emb):
            raise PoolError(f"line {lineno}: record {cid!r} has non-finite embedding entries")
        if dimension is None:
            dimension = len(emb)
        if len(emb) != dimension:
            raise PoolError(
                f"line {lineno}: record {cid!r} has dimension {len(emb)}, expected {dimension}"
            )
        key = tuple(float(x) for x in emb)
        if cid in seen_ids or key in seen_emb:
            dropped += 1
            continue
        seen_ids.add(cid)
        seen_emb.add(key)
        text = rec.get("text")
        cands.append(Candidate(cid, np.array(key), None if text is None else str(text)))
        if rec.get("score") is not None:
            scores[cid] = float(rec["score"])
    if not cands:
        raise PoolError("pool stream contained no records")
    return CandidatePool(tuple(cands), dimension, dropped=dropped, scores=scores)


def dump_pool(pool: CandidatePool, stream: IO[str], include_scores=True):
    for c in pool:
        rec = {"id": c.id, "embedding": [float(x) for x in c.embedding]}
        if c.text is not None:
            rec["text"] = c.text
        if include_scores and c.id in pool.scores:
            rec["score"] = pool.scores[c.id]
        stream.write(json.dumps(rec) + "\n")
