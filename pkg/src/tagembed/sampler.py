"""Adaptive positive sampling: per-anchor pools gated by degree statistics.

The candidate set is the first-hop neighborhood, widened with exact 2-hop
neighbors when both the anchor degree and the graph's average degree fall
below the pool budget t (the long-tail branch). Oversized candidate sets are
truncated to the top t by personalized PageRank score.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from tagembed.errors import EmptyPoolError, ValidationError
from tagembed.graph_store import TagCorpus, TextAttributedGraph
from tagembed.ppr import PprScores, personalized_pagerank, top_t_by_ppr

POOL_MAGIC = b"UPOS"
POOL_VERSION = 1


@dataclass
class PositivePool:
    """Positive candidates of one anchor.

    `members` are global node indices within the anchor's graph; `page` holds
    their raw PPR scores; `selection_table` holds the learnable logits whose
    softmax weights the members during positive generation.
    """

    anchor: int
    members: np.ndarray
    page: np.ndarray
    selection_table: np.ndarray

    def __post_init__(self) -> None:
        self.members = np.asarray(self.members, dtype=np.int64)
        self.page = np.asarray(self.page, dtype=np.float64)
        self.selection_table = np.asarray(self.selection_table, dtype=np.float64)

    @property
    def size(self) -> int:
        return int(self.members.shape[0])


def high_order_neighbors(graph: TextAttributedGraph, v: int) -> set[int]:
    """Nodes at shortest-path distance exactly 2 from v."""
    first = set(int(u) for u in graph.neighbors(v))
    second: set[int] = set()
    for u in first:
        second.update(int(w) for w in graph.neighbors(u))
    second.discard(v)
    return second - first


def adaps(
    corpus: TagCorpus,
    v: int,
    t: int,
    restart_prob: float = 0.15,
    epsilon: float = 1e-4,
    ppr_scores: PprScores | None = None,
) -> PositivePool:
    """Build the positive pool of global node v with budget t.

    Raises EmptyPoolError when the candidate set is empty (isolated anchor, or
    zero-degree anchor in the first-hop branch); such anchors are excluded
    from training rather than given degenerate self-positives.
    """
    if t < 1:
        raise ValidationError(f"t must be >= 1, got {t}")
    graph_idx, local = corpus.decompose(v)
    g = corpus.graphs[graph_idx]
    deg_v = g.degree(local)
    candidates = set(int(u) for u in g.neighbors(local))
    if deg_v < t and g.average_degree < t:
        candidates |= high_order_neighbors(g, local)
    if not candidates:
        raise EmptyPoolError(f"anchor {v} has no positive candidates")
    if ppr_scores is None:
        ppr_scores = personalized_pagerank(g, local, restart_prob, epsilon)
    ordered = sorted(candidates)
    if len(ordered) > t:
        ordered = top_t_by_ppr(ppr_scores, ordered, t)
    offset = int(corpus.offsets[graph_idx])
    members = np.asarray([u + offset for u in ordered], dtype=np.int64)
    page = np.asarray([ppr_scores.score(u) for u in ordered], dtype=np.float64)
    return PositivePool(
        anchor=v,
        members=members,
        page=page,
        selection_table=np.zeros(len(ordered), dtype=np.float64),
    )


def build_all_pools(
    corpus: TagCorpus,
    t: int,
    restart_prob: float = 0.15,
    epsilon: float = 1e-4,
    threads: int = 1,
    ppr_cache: dict[int, dict[int, float]] | None = None,
) -> tuple[dict[int, PositivePool], int]:
    """One pool per eligible anchor; returns (pools, excluded anchor count).

    Deterministic for a fixed corpus and config regardless of thread count
    (pools are assembled in global index order).
    """
    def one(v: int) -> PositivePool | None:
        scores = None
        if ppr_cache is not None and v in ppr_cache:
            _, local = corpus.decompose(v)
            scores = PprScores(local, ppr_cache[v], restart_prob, epsilon)
        try:
            return adaps(corpus, v, t, restart_prob, epsilon, ppr_scores=scores)
        except EmptyPoolError:
            return None

    indices = range(corpus.total_nodes)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(v) for v in indices]
    pools = {v: p for v, p in zip(indices, results) if p is not None}
    excluded = corpus.total_nodes - len(pools)
    return pools, excluded


def save_pools(path: str, pools: dict[int, PositivePool]) -> None:
    """Serialize pools (members, page, selection tables) for checkpoint/resume."""
    with open(path, "wb") as fh:
        fh.write(POOL_MAGIC)
        fh.write(struct.pack("<I", POOL_VERSION))
        fh.write(struct.pack("<Q", len(pools)))
        for anchor in sorted(pools):
            p = pools[anchor]
            k = p.size
            fh.write(struct.pack("<QI", anchor, k))
            fh.write(p.members.astype("<u8").tobytes())
            fh.write(p.page.astype("<f8").tobytes())
            fh.write(p.selection_table.astype("<f8").tobytes())


def load_pools(path: str) -> dict[int, PositivePool]:
    """Inverse of save_pools."""
    pools: dict[int, PositivePool] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != POOL_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected {POOL_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != POOL_VERSION:
            raise ValidationError(f"{path}: unsupported pool version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        for _ in range(count):
            anchor, k = struct.unpack("<QI", fh.read(12))
            members = np.frombuffer(fh.read(8 * k), dtype="<u8").astype(np.int64)
            page = np.frombuffer(fh.read(8 * k), dtype="<f8").astype(np.float64)
            table = np.frombuffer(fh.read(8 * k), dtype="<f8").astype(np.float64)
            pools[anchor] = PositivePool(anchor, members, page, table)
    return pools
