"""Lazy memory bank: the most recent encoding of every corpus node.

Rows are overwritten only when their node appears in a training batch, with
the embedding the current encoder produced for that step. There is no
momentum blending: a visited row equals the step's encoder output exactly,
and unvisited rows keep whatever encoder last wrote them (the frozen initial
encoder at step 0). Lookups are gradient-free by construction: callers
receive copies and never differentiate through them.
"""

from __future__ import annotations

import struct

import numpy as np

from tagembed.encoder import EncoderParams, embed_corpus
from tagembed.errors import ValidationError
from tagembed.graph_store import TagCorpus

BANK_MAGIC = b"UGLM"
BANK_VERSION = 1


class MemoryBank:
    """Dense n x d table of unit-norm node embeddings with visit counters."""

    def __init__(self, table: np.ndarray, last_updated: np.ndarray | None = None):
        self.table = np.asarray(table, dtype=np.float64)
        if self.table.ndim != 2:
            raise ValidationError("bank table must be 2-d")
        n = self.table.shape[0]
        if last_updated is None:
            last_updated = np.zeros(n, dtype=np.int64)
        self.last_updated = np.asarray(last_updated, dtype=np.int64)
        if self.last_updated.shape != (n,):
            raise ValidationError("last_updated must have one counter per row")

    @property
    def num_rows(self) -> int:
        return int(self.table.shape[0])

    @property
    def dim(self) -> int:
        return int(self.table.shape[1])

    def lookup(self, idx: int) -> np.ndarray:
        """Copy of row idx; participates in no gradient."""
        if not 0 <= idx < self.num_rows:
            raise IndexError(f"bank row {idx} out of range [0, {self.num_rows})")
        return self.table[idx].copy()

    def update(self, batch: list[tuple[int, np.ndarray]], step: int) -> None:
        """Overwrite exactly the batch rows with this step's encoder outputs."""
        seen: set[int] = set()
        for idx, vec in batch:
            if idx in seen:
                raise ValidationError(f"duplicate index {idx} in bank update batch")
            seen.add(idx)
            if not 0 <= idx < self.num_rows:
                raise IndexError(f"bank row {idx} out of range [0, {self.num_rows})")
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > 1e-6:
                raise ValidationError(f"bank rows must be unit-norm, got norm {norm} for row {idx}")
        for idx, vec in batch:
            self.table[idx] = vec
            self.last_updated[idx] = step


def init_bank(corpus: TagCorpus, f0: EncoderParams) -> MemoryBank:
    """Full initial pass: every row is the frozen encoder's output at step 0."""
    return MemoryBank(embed_corpus(f0, corpus))


def save_bank(path: str, bank: MemoryBank) -> None:
    """Checkpoint: magic, u32 version, u32 n, u32 d, f32 rows, u64 counters."""
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<III", BANK_VERSION, bank.num_rows, bank.dim))
        fh.write(bank.table.astype("<f4").tobytes())
        fh.write(bank.last_updated.astype("<u8").tobytes())


def load_bank(path: str) -> MemoryBank:
    """Inverse of save_bank (f32 storage precision)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BANK_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected {BANK_MAGIC!r}")
        version, n, d = struct.unpack("<III", fh.read(12))
        if version != BANK_VERSION:
            raise ValidationError(f"{path}: unsupported bank version {version}")
        table = np.frombuffer(fh.read(4 * n * d), dtype="<f4").astype(np.float64).reshape(n, d)
        counters = np.frombuffer(fh.read(8 * n), dtype="<u8").astype(np.int64)
    return MemoryBank(table, counters)
