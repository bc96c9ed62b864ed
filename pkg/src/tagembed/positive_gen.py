"""Learnable positive generation from a pool and the memory bank.

Each anchor carries a selection table of logits over its pool members. Its
softmax weights the members' bank rows into one aggregated positive (the
default path), or weights per-member similarities directly (the alternate
aggregation variant). A KL term against the softmax of the raw PageRank
importances keeps the learned weighting anchored to the graph structure.
"""

from __future__ import annotations

import numpy as np

from tagembed.encoder import EncoderParams, SEPARATOR, encode, similarity
from tagembed.graph_store import TagCorpus, context_description
from tagembed.memory_bank import MemoryBank
from tagembed.sampler import PositivePool

NORM_FLOOR = 1e-12


def softmax(x: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax (max subtraction)."""
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def selection_weights(pool: PositivePool) -> np.ndarray:
    """Softmax of the anchor's selection table, aligned with pool.members."""
    return softmax(pool.selection_table)


def init_selection_table(
    pool: PositivePool,
    f0: EncoderParams,
    corpus: TagCorpus,
    member_embeddings: np.ndarray | None = None,
) -> None:
    """Seed the table with frozen-encoder similarities.

    Entry k is sim(f0(anchor text + separator + anchor context), f0(member
    text)). `member_embeddings`, when given, must be the f0 encodings of all
    corpus nodes (row per global index) and skips re-encoding members.
    """
    anchor_text = corpus.node_text(pool.anchor)
    context = context_description(corpus, pool.anchor)
    anchor_vec = encode(f0, anchor_text + SEPARATOR + context)
    table = np.zeros(pool.size)
    for k, member in enumerate(pool.members):
        if member_embeddings is not None:
            member_vec = member_embeddings[int(member)]
        else:
            member_vec = encode(f0, corpus.node_text(int(member)))
        table[k] = similarity(anchor_vec, member_vec)
    pool.selection_table = table


def positive_embedding(pool: PositivePool, bank: MemoryBank) -> np.ndarray:
    """Convex combination of member bank rows under the selection weights.

    The mixture is returned unnormalized; the training objective divides its
    similarity by the mixture norm. Bank rows are constants here: no gradient
    flows through them.
    """
    weights = selection_weights(pool)
    out = np.zeros(bank.dim)
    for w, member in zip(weights, pool.members):
        out += w * bank.table[int(member)]
    return out


def kl_regularizer(pool: PositivePool) -> float:
    """KL(softmax(selection table) || softmax(page)); zero iff they coincide."""
    p = selection_weights(pool)
    q = softmax(pool.page)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def positive_similarity_aggregate(
    pool: PositivePool, bank: MemoryBank, anchor_embedding: np.ndarray
) -> float:
    """Alternate order: weight per-member cosines instead of embeddings."""
    weights = selection_weights(pool)
    total = 0.0
    for w, member in zip(weights, pool.members):
        y = bank.table[int(member)]
        norm = max(float(np.linalg.norm(y)), NORM_FLOOR)
        total += w * float(np.dot(anchor_embedding, y)) / norm
    return total


def softmax_jacobian_apply(weights: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """(diag(w) - w w^T) @ upstream, the softmax backward map."""
    return weights * (upstream - float(np.dot(weights, upstream)))


def kl_grad(pool: PositivePool) -> np.ndarray:
    """Gradient of kl_regularizer w.r.t. the selection table.

    Simplifies to p * (log(p/q) - KL) through the softmax Jacobian.
    """
    p = selection_weights(pool)
    q = softmax(pool.page)
    log_ratio = np.log(p) - np.log(q)
    kl = float(np.sum(p * log_ratio))
    return p * (log_ratio - kl)


def selection_table_grad(
    pool: PositivePool,
    bank: MemoryBank,
    upstream_on_positive: np.ndarray,
    alpha: float = 0.0,
) -> np.ndarray:
    """Gradient of dot(upstream, positive_embedding) + alpha * KL w.r.t. the table."""
    weights = selection_weights(pool)
    member_dots = np.asarray(
        [float(np.dot(upstream_on_positive, bank.table[int(m)])) for m in pool.members]
    )
    grad = softmax_jacobian_apply(weights, member_dots)
    if alpha != 0.0:
        grad = grad + alpha * kl_grad(pool)
    return grad
