"""Contrastive pretraining of one text encoder over multiple text-attributed graphs.

The package is organized around the training pipeline: `graph_store` loads and
indexes the corpus, `ppr` and `sampler` build per-anchor positive pools,
`encoder` maps node text to unit embeddings, `positive_gen` aggregates pool
members into a learnable positive, `memory_bank` caches node encodings for lazy
reuse, `trainer` runs the contrastive objective, and `evaluator` measures the
frozen embeddings on node classification, link prediction, and transfer.
"""

from tagembed.errors import EmptyPoolError, TagError, TrainingError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "EmptyPoolError",
    "TagError",
    "TrainingError",
    "ValidationError",
    "__version__",
]
