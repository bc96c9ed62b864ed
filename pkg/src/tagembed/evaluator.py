"""Downstream evaluation of frozen embeddings.

Node classification uses a multinomial logistic probe trained by full-batch
gradient descent and early-stopped on validation accuracy; the fitting step
sees train labels only, validation accuracy is measured between steps. Link
prediction scores node pairs with a logistic head over the elementwise
product of endpoint embeddings, with uniformly sampled non-edges as
negatives. Transfer evaluation embeds an unseen graph with the frozen
encoder and compares the probe against the raw hashed-feature baseline.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from tagembed.encoder import EncoderParams, embed_corpus, hash_features
from tagembed.errors import ValidationError
from tagembed.graph_store import TagCorpus, TextAttributedGraph, build_corpus, build_graph

EMBEDDING_MAGIC = b"UEMB"

DEFAULT_NODE_RATIOS = (0.05, 0.20, 0.75)
DEFAULT_EDGE_RATIOS = (0.85, 0.10, 0.05)


def _check_ratios(ratios) -> tuple[float, float, float]:
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or any(x < 0 for x in r):
        raise ValidationError(f"ratios must be three non-negative reals, got {ratios}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {ratios} (sum {sum(r)})")
    return r


@dataclass
class EvalReport:
    """Per-task metric means and stds over repeated runs."""

    task: str
    metrics: dict[str, dict[str, float]]
    runs: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"task": self.task, "metrics": self.metrics, "runs": self.runs}
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _summarize(values_by_metric: dict[str, list[float]], task: str, runs: int, **extra) -> EvalReport:
    metrics = {
        name: {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        for name, vals in values_by_metric.items()
    }
    return EvalReport(task=task, metrics=metrics, runs=runs, extra=extra)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def split_nodes(
    graph: TextAttributedGraph, ratios=DEFAULT_NODE_RATIOS, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint, exhaustive (train, val, test) split of the labeled nodes."""
    r_train, r_val, _ = _check_ratios(ratios)
    if graph.labels is None:
        raise ValidationError(f"graph {graph.graph_id!r} has no labels")
    labeled = np.flatnonzero(graph.labels >= 0)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5971])))
    perm = labeled[rng.permutation(len(labeled))]
    n = len(perm)
    b1 = int(round(n * r_train))
    b2 = int(round(n * (r_train + r_val)))
    train, val, test = perm[:b1], perm[b1:b2], perm[b2:]
    train_classes = set(int(c) for c in graph.labels[train])
    all_classes = set(int(c) for c in graph.labels[labeled])
    missing = all_classes - train_classes
    if missing:
        warnings.warn(
            f"classes {sorted(missing)} absent from the train split of {graph.graph_id!r}",
            stacklevel=2,
        )
    return train, val, test


def split_nodes_k_shot(
    graph: TextAttributedGraph, k: int, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """k labeled examples per class for train, up to k more for val, rest test."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if graph.labels is None:
        raise ValidationError(f"graph {graph.graph_id!r} has no labels")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5972])))
    train, val, test = [], [], []
    labeled = np.flatnonzero(graph.labels >= 0)
    for cls in sorted(set(int(c) for c in graph.labels[labeled])):
        members = labeled[graph.labels[labeled] == cls]
        members = members[rng.permutation(len(members))]
        train.extend(members[:k])
        val.extend(members[k : 2 * k])
        test.extend(members[2 * k :])
    return (
        np.asarray(sorted(train), dtype=np.int64),
        np.asarray(sorted(val), dtype=np.int64),
        np.asarray(sorted(test), dtype=np.int64),
    )


@dataclass
class EdgeSplits:
    """Edge holdout with per-split negatives and the test-masked graph."""

    train_edges: np.ndarray  # shape (m, 2), u < v
    val_edges: np.ndarray
    test_edges: np.ndarray
    train_negatives: np.ndarray
    val_negatives: np.ndarray
    test_negatives: np.ndarray
    masked_graph: TextAttributedGraph


def split_edges(
    graph: TextAttributedGraph, ratios=DEFAULT_EDGE_RATIOS, seed: int = 0
) -> EdgeSplits:
    """Partition edges into (train, val, test) and sample matching non-edges.

    Ratios are (train, val, test) fractions of the edge set. Test edges are
    removed from the returned masked graph, which is the adjacency a training
    run should see. Negatives are uniform non-edges, disjoint across splits,
    never colliding with any true edge.
    """
    r_train, r_val, _ = _check_ratios(ratios)
    edges = []
    for u in range(graph.num_nodes):
        for v in graph.neighbors(u):
            if u < int(v):
                edges.append((u, int(v)))
    m = len(edges)
    if m == 0:
        raise ValidationError(f"graph {graph.graph_id!r} has no edges to split")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xED6E])))
    order = rng.permutation(m)
    edges_arr = np.asarray(edges, dtype=np.int64)[order]
    b1 = int(round(m * r_train))
    b2 = int(round(m * (r_train + r_val)))
    train_e, val_e, test_e = edges_arr[:b1], edges_arr[b1:b2], edges_arr[b2:]

    edge_set = set(map(tuple, edges))
    needed = m
    negatives: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    attempts = 0
    max_attempts = 100 * needed
    n = graph.num_nodes
    while len(negatives) < needed:
        if attempts >= max_attempts:
            raise ValidationError(
                f"could not sample {needed} non-edges after {max_attempts} attempts; "
                f"graph {graph.graph_id!r} too dense"
            )
        attempts += 1
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in edge_set or pair in seen:
            continue
        seen.add(pair)
        negatives.append(pair)
    neg_arr = np.asarray(negatives, dtype=np.int64)
    train_n = neg_arr[: len(train_e)]
    val_n = neg_arr[len(train_e) : len(train_e) + len(val_e)]
    test_n = neg_arr[len(train_e) + len(val_e) :]

    kept = [tuple(e) for e in np.concatenate([train_e, val_e])] if b2 else []
    labels = None
    if graph.labels is not None:
        labels = [int(x) for x in graph.labels]
    masked = build_graph(graph.graph_id, graph.domain_text, graph.node_texts, kept, labels)
    return EdgeSplits(
        train_edges=train_e,
        val_edges=val_e,
        test_edges=test_e,
        train_negatives=train_n,
        val_negatives=val_n,
        test_negatives=test_n,
        masked_graph=masked,
    )


# ---------------------------------------------------------------------------
# Linear probe
# ---------------------------------------------------------------------------


class SoftmaxProbe:
    """Multinomial logistic regression trained by full-batch gradient descent."""

    def __init__(self, dim: int, num_classes: int, lr: float = 0.5):
        self.weights = np.zeros((num_classes, dim))
        self.bias = np.zeros(num_classes)
        self.lr = lr

    def _logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.bias

    def fit_step(self, X: np.ndarray, y: np.ndarray) -> None:
        """One gradient step on the cross-entropy of the train set only."""
        logits = self._logits(X)
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(len(y)), y] -= 1.0
        probs /= len(y)
        self.weights -= self.lr * (probs.T @ X)
        self.bias -= self.lr * probs.sum(axis=0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._logits(X).argmax(axis=1)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        logits = self._logits(X)
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        return probs / probs.sum(axis=1, keepdims=True)

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self.weights.copy(), self.bias.copy()

    def restore(self, snap: tuple[np.ndarray, np.ndarray]) -> None:
        self.weights, self.bias = snap[0].copy(), snap[1].copy()


def fit_probe(
    train_X: np.ndarray,
    train_y: np.ndarray,
    val_X: np.ndarray,
    val_y: np.ndarray,
    num_classes: int,
    lr: float = 0.5,
    max_epochs: int = 300,
    patience: int = 30,
) -> SoftmaxProbe:
    """Fit with early stopping on validation accuracy (measured between steps)."""
    if len(set(int(c) for c in train_y)) < 2:
        raise ValidationError("train split contains a single class; cannot fit probe")
    probe = SoftmaxProbe(train_X.shape[1], num_classes, lr=lr)
    best_acc = -1.0
    best_snap = probe.snapshot()
    stale = 0
    for _ in range(max_epochs):
        probe.fit_step(train_X, train_y)
        if len(val_y):
            acc = float((probe.predict(val_X) == val_y).mean())
        else:
            acc = float((probe.predict(train_X) == train_y).mean())
        if acc > best_acc + 1e-12:
            best_acc = acc
            best_snap = probe.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    probe.restore(best_snap)
    return probe


def linear_probe_nc(
    embeddings: np.ndarray,
    labels: np.ndarray,
    splits: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    lr: float = 0.5,
) -> EvalReport:
    """Test accuracy of the probe, mean and std over the given splits."""
    num_classes = int(labels.max()) + 1
    accs = []
    for train, val, test in splits:
        probe = fit_probe(
            embeddings[train], labels[train], embeddings[val], labels[val], num_classes, lr=lr
        )
        accs.append(float((probe.predict(embeddings[test]) == labels[test]).mean()))
    return _summarize({"accuracy": accs}, task="node_classification", runs=len(splits))


# ---------------------------------------------------------------------------
# Link prediction
# ---------------------------------------------------------------------------


def _pair_features(embeddings: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return embeddings[pairs[:, 0]] * embeddings[pairs[:, 1]]


def hits_at_k(pos_scores: np.ndarray, neg_scores: np.ndarray, k: int) -> float:
    """Fraction of positives scoring above the k-th highest negative."""
    if len(pos_scores) == 0:
        return 0.0
    if k >= len(neg_scores):
        return 1.0
    threshold = np.sort(neg_scores)[-k]
    return float((pos_scores > threshold).mean())


def link_pred_eval(
    embeddings: np.ndarray,
    edge_splits: list[EdgeSplits],
    k: int = 100,
    lr: float = 0.5,
    max_epochs: int = 300,
) -> EvalReport:
    """AUC / AP / Hits@K of the logistic head on test edges, over the splits.

    K is clamped to the number of test positives of each split.
    """
    aucs, aps, hits = [], [], []
    for sp in edge_splits:
        train_pairs = np.concatenate([sp.train_edges, sp.train_negatives])
        train_y = np.concatenate(
            [np.ones(len(sp.train_edges), dtype=np.int64), np.zeros(len(sp.train_negatives), dtype=np.int64)]
        )
        val_pairs = np.concatenate([sp.val_edges, sp.val_negatives])
        val_y = np.concatenate(
            [np.ones(len(sp.val_edges), dtype=np.int64), np.zeros(len(sp.val_negatives), dtype=np.int64)]
        )
        if len(sp.test_edges) == 0:
            raise ValidationError("edge split has no test positives")
        head = fit_probe(
            _pair_features(embeddings, train_pairs),
            train_y,
            _pair_features(embeddings, val_pairs) if len(val_pairs) else np.zeros((0, embeddings.shape[1])),
            val_y,
            num_classes=2,
            lr=lr,
            max_epochs=max_epochs,
        )
        pos_scores = head.predict_proba(_pair_features(embeddings, sp.test_edges))[:, 1]
        neg_scores = head.predict_proba(_pair_features(embeddings, sp.test_negatives))[:, 1]
        y_true = np.concatenate([np.ones(len(pos_scores)), np.zeros(len(neg_scores))])
        y_score = np.concatenate([pos_scores, neg_scores])
        aucs.append(float(roc_auc_score(y_true, y_score)))
        aps.append(float(average_precision_score(y_true, y_score)))
        k_eff = min(k, len(pos_scores))
        hits.append(hits_at_k(pos_scores, neg_scores, k_eff))
    return _summarize(
        {"auc": aucs, "ap": aps, f"hits@{k}": hits}, task="link_prediction", runs=len(edge_splits)
    )


# ---------------------------------------------------------------------------
# Transfer
# ---------------------------------------------------------------------------


def hash_feature_matrix(graph: TextAttributedGraph, feature_dim: int) -> np.ndarray:
    """Dense raw hashed-feature matrix (the untrained text baseline)."""
    out = np.zeros((graph.num_nodes, feature_dim))
    for i, text in enumerate(graph.node_texts):
        for bucket, weight in hash_features(text, feature_dim).items():
            out[i, bucket] = weight
    return out


def transfer_eval(
    params: EncoderParams,
    held_out_graph: TextAttributedGraph,
    mode: str = "in_domain",
    node_ratios=DEFAULT_NODE_RATIOS,
    edge_ratios=DEFAULT_EDGE_RATIOS,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    k: int = 100,
    k_shot: int | None = None,
) -> EvalReport:
    """Probe and link prediction on an unseen graph, frozen encoder vs hash baseline."""
    if mode not in ("in_domain", "cross_domain"):
        raise ValidationError(f"mode must be in_domain or cross_domain, got {mode!r}")
    solo: TagCorpus = build_corpus([held_out_graph])
    emb = embed_corpus(params, solo)
    hashed = hash_feature_matrix(held_out_graph, params.feature_dim)

    metrics: dict[str, dict[str, float]] = {}
    runs = len(seeds)
    if held_out_graph.labels is not None:
        if k_shot is None:
            node_splits = [split_nodes(held_out_graph, node_ratios, seed=s) for s in seeds]
        else:
            node_splits = [split_nodes_k_shot(held_out_graph, k_shot, seed=s) for s in seeds]
        labels = held_out_graph.labels
        nc_trained = linear_probe_nc(emb, labels, node_splits)
        nc_hash = linear_probe_nc(hashed, labels, node_splits)
        metrics["accuracy"] = nc_trained.metrics["accuracy"]
        metrics["accuracy_hash_baseline"] = nc_hash.metrics["accuracy"]

    edge_splits = [split_edges(held_out_graph, edge_ratios, seed=s) for s in seeds]
    lp_trained = link_pred_eval(emb, edge_splits, k=k)
    lp_hash = link_pred_eval(hashed, edge_splits, k=k)
    for name, stats in lp_trained.metrics.items():
        metrics[name] = stats
        metrics[f"{name}_hash_baseline"] = lp_hash.metrics[name]
    return EvalReport(
        task=f"transfer_{mode}",
        metrics=metrics,
        runs=runs,
        extra={"graph_id": held_out_graph.graph_id, "k_shot": k_shot},
    )


# ---------------------------------------------------------------------------
# Embedding file
# ---------------------------------------------------------------------------


def save_embeddings(path: str, embeddings: np.ndarray) -> None:
    """Embedding file: magic, u32 n, u32 d, row-major f32 little-endian."""
    emb = np.asarray(embeddings, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", emb.shape[0], emb.shape[1]))
        fh.write(emb.astype("<f4").tobytes())


def load_embeddings(path: str) -> np.ndarray:
    """Inverse of save_embeddings (f32 storage precision)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBEDDING_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
        n, d = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * n * d), dtype="<f4").astype(np.float64)
        if data.size != n * d:
            raise ValidationError(f"{path}: truncated embedding payload")
    return data.reshape(n, d)
