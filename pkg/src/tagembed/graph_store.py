"""Loading, validation, and indexing of text-attributed graph corpora.

Graphs are undirected and stored in CSR form (sorted neighbor lists, no
duplicates, no self-loops). A corpus is an ordered list of graphs with a
global node index: node j of graph i maps to j + offsets[i]. Directed input
edges are symmetrized on ingest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from tagembed.errors import ValidationError

UNLABELED = -1


@dataclass
class TextAttributedGraph:
    """One undirected graph whose nodes carry free text and optional labels.

    `labels` uses -1 for unlabeled nodes and is None when no node is labeled.
    """

    graph_id: str
    domain_text: str
    node_texts: list[str]
    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def num_nodes(self) -> int:
        return len(self.node_texts)

    @property
    def num_edges(self) -> int:
        return int(self.indices.shape[0]) // 2

    @property
    def degrees(self) -> np.ndarray:
        return self.indptr[1:] - self.indptr[:-1]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    @property
    def average_degree(self) -> float:
        if self.num_nodes == 0:
            return 0.0
        return 2.0 * self.num_edges / self.num_nodes

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    @property
    def adjacency_lists(self) -> list[list[int]]:
        """Neighbor lists as plain ints; cached (the graph is immutable)."""
        cached = getattr(self, "_adjacency_lists", None)
        if cached is None:
            indptr = self.indptr.tolist()
            indices = self.indices.tolist()
            cached = [indices[indptr[v] : indptr[v + 1]] for v in range(self.num_nodes)]
            object.__setattr__(self, "_adjacency_lists", cached)
        return cached

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TextAttributedGraph):
            return NotImplemented
        same_labels = (
            (self.labels is None and other.labels is None)
            or (
                self.labels is not None
                and other.labels is not None
                and np.array_equal(self.labels, other.labels)
            )
        )
        return (
            self.graph_id == other.graph_id
            and self.domain_text == other.domain_text
            and self.node_texts == other.node_texts
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and same_labels
        )


@dataclass
class TagCorpus:
    """Ordered set of graphs with prefix-sum offsets for global indexing."""

    graphs: list[TextAttributedGraph]
    offsets: np.ndarray = field(init=False)
    total_nodes: int = field(init=False)

    def __post_init__(self) -> None:
        if not self.graphs:
            raise ValidationError("corpus must contain at least one graph")
        ids = [g.graph_id for g in self.graphs]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate graph_id in corpus: {ids}")
        sizes = [g.num_nodes for g in self.graphs]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.total_nodes = int(self.offsets[-1])

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    def global_index(self, graph: int, local: int) -> int:
        """Map (graph index, local node id) to the corpus-wide node index."""
        if not 0 <= graph < self.num_graphs:
            raise ValidationError(f"graph index {graph} out of range [0, {self.num_graphs})")
        n_g = self.graphs[graph].num_nodes
        if not 0 <= local < n_g:
            raise ValidationError(f"local index {local} out of range [0, {n_g}) in graph {graph}")
        return int(local + self.offsets[graph])

    def decompose(self, value: int) -> tuple[int, int]:
        """Inverse of global_index: global id -> (graph index, local id)."""
        if not 0 <= value < self.total_nodes:
            raise ValidationError(f"global index {value} out of range [0, {self.total_nodes})")
        graph = int(np.searchsorted(self.offsets, value, side="right")) - 1
        return graph, int(value - self.offsets[graph])

    def node_text(self, value: int) -> str:
        graph, local = self.decompose(value)
        return self.graphs[graph].node_texts[local]


def context_description(corpus: TagCorpus, v: int) -> str:
    """Domain text of v's graph plus the fixed node-status sentence.

    The status sentence states the node degree and the graph's average degree
    (two decimals) in a byte-deterministic format.
    """
    graph_idx, local = corpus.decompose(v)
    g = corpus.graphs[graph_idx]
    return (
        f"{g.domain_text} This node has {g.degree(local)} connected neighbors "
        f"and the average degree of this graph is {g.average_degree:.2f}."
    )


def _csr_from_edges(n: int, edges: set[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    """Build sorted CSR adjacency from a set of undirected edges (u < v)."""
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    indptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []
    for u in range(n):
        nb = sorted(adj[u])
        indptr[u + 1] = indptr[u] + len(nb)
        chunks.append(np.asarray(nb, dtype=np.int64))
    indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return indptr, indices


def build_graph(
    graph_id: str,
    domain_text: str,
    node_texts: list[str],
    edges: list[tuple[int, int]],
    labels: list[int | None] | None = None,
) -> TextAttributedGraph:
    """Construct a validated undirected graph from an edge list.

    Duplicate edges (including reversed duplicates) are collapsed; self-loops
    and out-of-range endpoints raise ValidationError.
    """
    n = len(node_texts)
    dedup: set[tuple[int, int]] = set()
    for u, v in edges:
        if u == v:
            raise ValidationError(f"self-loop on node {u} in graph {graph_id!r}")
        if not (0 <= u < n and 0 <= v < n):
            raise ValidationError(
                f"edge ({u}, {v}) references a node outside [0, {n}) in graph {graph_id!r}"
            )
        dedup.add((min(u, v), max(u, v)))
    indptr, indices = _csr_from_edges(n, dedup)
    label_arr = None
    if labels is not None and any(lb is not None for lb in labels):
        label_arr = np.asarray(
            [UNLABELED if lb is None else int(lb) for lb in labels], dtype=np.int64
        )
    return TextAttributedGraph(
        graph_id=graph_id,
        domain_text=domain_text,
        node_texts=list(node_texts),
        indptr=indptr,
        indices=indices,
        labels=label_arr,
    )


def ingest_graph(
    nodes_path: str, edges_path: str, domain_text: str, graph_id: str | None = None
) -> TextAttributedGraph:
    """Load one graph from a JSONL nodes file and a tab-separated edges file.

    Nodes file: one JSON object per line, {"id": int, "text": str,
    "label": int|null}, ids consecutive from 0 in file order. Edges file:
    "u<TAB>v" per line, 0-based. Parse failures report the line number.
    """
    texts: list[str] = []
    labels: list[int | None] = []
    with open(nodes_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                node_id = int(obj["id"])
                text = obj["text"]
                label = obj.get("label")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{nodes_path}:{lineno}: malformed node line: {exc}") from exc
            if not isinstance(text, str):
                raise ValidationError(f"{nodes_path}:{lineno}: node text must be a string")
            if node_id != len(texts):
                raise ValidationError(
                    f"{nodes_path}:{lineno}: node id {node_id} out of order (expected {len(texts)})"
                )
            texts.append(text)
            labels.append(None if label is None else int(label))
    edges: list[tuple[int, int]] = []
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValidationError(
                    f"{edges_path}:{lineno}: expected 'u<TAB>v', got {line!r}"
                )
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ValidationError(f"{edges_path}:{lineno}: non-integer endpoint") from exc
            edges.append((u, v))
    if graph_id is None:
        graph_id = nodes_path
    return build_graph(graph_id, domain_text, texts, edges, labels)


def build_corpus(graphs: list[TextAttributedGraph]) -> TagCorpus:
    """Assemble graphs into a corpus; offsets follow ingestion order."""
    return TagCorpus(graphs=list(graphs))


def write_graph_files(graph: TextAttributedGraph, nodes_path: str, edges_path: str) -> None:
    """Write a graph back to the JSONL nodes / TSV edges formats."""
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for i, text in enumerate(graph.node_texts):
            label = None
            if graph.labels is not None and graph.labels[i] != UNLABELED:
                label = int(graph.labels[i])
            fh.write(json.dumps({"id": i, "text": text, "label": label}) + "\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for u in range(graph.num_nodes):
            for v in graph.neighbors(u):
                if u < v:
                    fh.write(f"{u}\t{int(v)}\n")


def write_manifest(entries: list[dict], manifest_path: str) -> None:
    """Write a corpus manifest (JSONL, one graph spec per line)."""
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")


def load_manifest(manifest_path: str) -> list[dict]:
    """Read a corpus manifest (JSONL, one graph spec per line)."""
    entries = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(
                    f"{manifest_path}:{lineno}: malformed manifest line: {exc}"
                ) from exc
            for key in ("graph_id", "nodes", "edges", "domain_text"):
                if key not in obj:
                    raise ValidationError(f"{manifest_path}:{lineno}: missing key {key!r}")
            entries.append(obj)
    if not entries:
        raise ValidationError(f"{manifest_path}: empty manifest")
    return entries


def load_corpus(manifest_path: str, base_dir: str | None = None) -> TagCorpus:
    """Ingest every graph named by a manifest into one corpus.

    Relative node/edge paths are resolved against the manifest's directory
    unless base_dir overrides it.
    """
    import os

    if base_dir is None:
        base_dir = os.path.dirname(os.path.abspath(manifest_path))
    graphs = []
    for entry in load_manifest(manifest_path):
        nodes = entry["nodes"]
        edges = entry["edges"]
        if not os.path.isabs(nodes):
            nodes = os.path.join(base_dir, nodes)
        if not os.path.isabs(edges):
            edges = os.path.join(base_dir, edges)
        graphs.append(
            ingest_graph(nodes, edges, entry["domain_text"], graph_id=entry["graph_id"])
        )
    return build_corpus(graphs)
