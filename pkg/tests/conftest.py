"""Shared builders for small deterministic test graphs and corpora."""

import numpy as np
import pytest

from tagembed.graph_store import TagCorpus, TextAttributedGraph, build_corpus, build_graph


def make_graph(
    n: int,
    edges: list[tuple[int, int]],
    graph_id: str = "g",
    domain_text: str = "It is a node from a test network.",
    labels: list[int] | None = None,
    texts: list[str] | None = None,
) -> TextAttributedGraph:
    if texts is None:
        texts = [f"node {i} text" for i in range(n)]
    return build_graph(graph_id, domain_text, texts, edges, labels)


def path_graph(n: int, **kwargs) -> TextAttributedGraph:
    return make_graph(n, [(i, i + 1) for i in range(n - 1)], **kwargs)


def star_graph(leaves: int, **kwargs) -> TextAttributedGraph:
    return make_graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)], **kwargs)


def complete_graph(n: int, **kwargs) -> TextAttributedGraph:
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return make_graph(n, edges, **kwargs)


def random_graph(
    n: int, p: float, seed: int, graph_id: str = "rand", ensure_edge: bool = True
) -> TextAttributedGraph:
    """Erdos-Renyi graph; optionally guarantees at least one edge."""
    rng = np.random.Generator(np.random.PCG64(seed))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    if ensure_edge and not edges and n >= 2:
        edges = [(0, 1)]
    return make_graph(n, edges, graph_id=graph_id)


def two_path_corpus() -> TagCorpus:
    return build_corpus(
        [
            path_graph(3, graph_id="p3", domain_text="It is a stop on a short line."),
            path_graph(5, graph_id="p5", domain_text="It is a stop on a longer line."),
        ]
    )


@pytest.fixture
def small_corpus() -> TagCorpus:
    return two_path_corpus()
