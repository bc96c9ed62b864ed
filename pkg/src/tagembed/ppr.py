"""Personalized PageRank via forward push, plus top-t ranking and a score cache.

Push maintains an estimate p and residual r with the invariant that the true
PPR vector equals p plus the PPR of the remaining residual mass. Processing
stops once every residual satisfies r[u] < epsilon * deg(u), which on an
undirected graph bounds the per-node error by epsilon * deg(node).
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from tagembed.errors import ValidationError
from tagembed.graph_store import TextAttributedGraph

PPR_CACHE_MAGIC = b"UPPR"
PPR_CACHE_VERSION = 1


@dataclass
class PprScores:
    """Sparse PPR scores of one source node over its own graph."""

    source: int
    scores: dict[int, float]
    restart_prob: float
    epsilon: float

    def score(self, node: int) -> float:
        return self.scores.get(node, 0.0)


def personalized_pagerank(
    graph: TextAttributedGraph, source: int, restart_prob: float = 0.15, epsilon: float = 1e-4
) -> PprScores:
    """Approximate PPR from `source` by forward push.

    Deterministic: FIFO queue seeded with the source; newly activated nodes
    are appended in ascending neighbor order (CSR neighbor lists are sorted).
    An isolated source gets the whole teleport mass: {source: 1.0}.
    """
    n = graph.num_nodes
    if not 0 <= source < n:
        raise ValidationError(f"source {source} out of range [0, {n})")
    if not 0.0 < restart_prob < 1.0:
        raise ValidationError(f"restart_prob must be in (0, 1), got {restart_prob}")
    if epsilon <= 0.0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    adj = graph.adjacency_lists
    if not adj[source]:
        return PprScores(source, {source: 1.0}, restart_prob, epsilon)

    p = [0.0] * n
    r = [0.0] * n
    threshold = [epsilon * len(adj[v]) for v in range(n)]
    r[source] = 1.0
    queue: deque[int] = deque([source])
    in_queue = [False] * n
    in_queue[source] = True
    alpha = restart_prob
    keep = 1.0 - alpha
    while queue:
        u = queue.popleft()
        in_queue[u] = False
        res = r[u]
        nbrs = adj[u]
        if res < threshold[u]:
            continue
        p[u] += alpha * res
        push = keep * res / len(nbrs)
        r[u] = 0.0
        for v in nbrs:
            r[v] += push
            if not in_queue[v] and r[v] >= threshold[v]:
                queue.append(v)
                in_queue[v] = True
    return PprScores(source, {v: p[v] for v in range(n) if p[v] != 0.0}, restart_prob, epsilon)


def top_t_by_ppr(scores: PprScores, candidates: list[int], t: int) -> list[int]:
    """Keep the min(t, len(candidates)) candidates with highest PPR score.

    Ordered by (score descending, node id ascending); candidates absent from
    the sparse score map count as zero.
    """
    if not candidates:
        raise ValidationError("candidates must be non-empty")
    if t < 1:
        raise ValidationError(f"t must be >= 1, got {t}")
    ranked = sorted(candidates, key=lambda c: (-scores.score(c), c))
    return ranked[: min(t, len(ranked))]


def ppr_power_iteration(
    graph: TextAttributedGraph,
    source: int,
    restart_prob: float = 0.15,
    max_iter: int = 10_000,
    tol: float = 1e-15,
) -> np.ndarray:
    """Dense power iteration of the PPR linear system (reference oracle).

    Iterates pi <- alpha * e_s + (1 - alpha) * pi @ D^-1 A until the update
    mass is below tol or max_iter is reached. Isolated nodes keep their
    residual at the source (teleport-only), matching the push convention.
    """
    n = graph.num_nodes
    deg = graph.degrees.astype(np.float64)
    if deg[source] == 0:
        out = np.zeros(n)
        out[source] = 1.0
        return out
    # Row-stochastic transition restricted to non-isolated nodes.
    P = np.zeros((n, n))
    for u in range(n):
        nbrs = graph.neighbors(u)
        if len(nbrs):
            P[u, nbrs] = 1.0 / deg[u]
    alpha = restart_prob
    e = np.zeros(n)
    e[source] = 1.0
    pi = np.zeros(n)
    for _ in range(max_iter):
        nxt = alpha * e + (1.0 - alpha) * (pi @ P)
        if np.abs(nxt - pi).sum() < tol:
            pi = nxt
            break
        pi = nxt
    return pi


def save_ppr_cache(
    path: str, records: dict[int, dict[int, float]], restart_prob: float, epsilon: float
) -> None:
    """Write per-anchor sparse score lists keyed by global anchor index.

    Little-endian binary: magic, u32 version, f64 restart_prob, f64 epsilon,
    u64 record count, then per record u64 anchor, u32 k, k*u32 local node ids,
    k*f64 scores.
    """
    with open(path, "wb") as fh:
        fh.write(PPR_CACHE_MAGIC)
        fh.write(struct.pack("<I", PPR_CACHE_VERSION))
        fh.write(struct.pack("<dd", restart_prob, epsilon))
        fh.write(struct.pack("<Q", len(records)))
        for anchor in sorted(records):
            items = sorted(records[anchor].items())
            fh.write(struct.pack("<QI", anchor, len(items)))
            for node, _ in items:
                fh.write(struct.pack("<I", node))
            for _, val in items:
                fh.write(struct.pack("<d", val))


def load_ppr_cache(path: str) -> tuple[dict[int, dict[int, float]], float, float]:
    """Read a score cache written by save_ppr_cache."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PPR_CACHE_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected {PPR_CACHE_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != PPR_CACHE_VERSION:
            raise ValidationError(f"{path}: unsupported cache version {version}")
        restart_prob, epsilon = struct.unpack("<dd", fh.read(16))
        (count,) = struct.unpack("<Q", fh.read(8))
        records: dict[int, dict[int, float]] = {}
        for _ in range(count):
            anchor, k = struct.unpack("<QI", fh.read(12))
            nodes = struct.unpack(f"<{k}I", fh.read(4 * k)) if k else ()
            vals = struct.unpack(f"<{k}d", fh.read(8 * k)) if k else ()
            records[anchor] = dict(zip(nodes, vals))
    return records, restart_prob, epsilon
