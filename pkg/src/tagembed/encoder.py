"""Trainable text encoder: hashed bag-of-terms features under a linear map.

The encoder stands in for a large pretrained text model behind the same
contract: UTF-8 string in, unit-norm d-vector out, differentiable in its
parameters. Terms are unigrams plus adjacent bigrams of the lowercased text,
hashed with 64-bit FNV-1a into F buckets; the count vector is L2-normalized,
projected by a trainable d x F matrix, and normalized again. No dropout is
applied at this scale.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass

import numpy as np

from tagembed.errors import ValidationError

ENCODER_MAGIC = b"UENC"
ENCODER_VERSION = 1

EMPTY_TOKEN = "[EMPTY]"
SEPARATOR = " [SEP] "

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def hash_features(text: str, feature_dim: int) -> dict[int, float]:
    """Sparse L2-normalized term-count vector of `text` over hashed buckets.

    Tokens are maximal alphanumeric runs of the lowercased text; terms are the
    tokens plus adjacent-token bigrams ("a b"). Whitespace-only or empty text
    emits the single reserved term "[EMPTY]".
    """
    if feature_dim < 1:
        raise ValidationError(f"feature_dim must be >= 1, got {feature_dim}")
    tokens = _TOKEN_RE.findall(text.lower())
    terms = list(tokens)
    terms.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    if not terms:
        terms = [EMPTY_TOKEN]
    counts: dict[int, float] = {}
    for term in terms:
        bucket = fnv1a64(term.encode("utf-8")) % feature_dim
        counts[bucket] = counts.get(bucket, 0.0) + 1.0
    norm = np.sqrt(sum(w * w for w in counts.values()))
    return {b: w / norm for b, w in counts.items()}


@dataclass
class EncoderParams:
    """Trainable projection of hashed features into the embedding space."""

    projection: np.ndarray  # shape (embed_dim, feature_dim)

    def __post_init__(self) -> None:
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if self.projection.ndim != 2:
            raise ValidationError("projection must be a 2-d matrix")
        d, F = self.projection.shape
        if d < 2 or F < d:
            raise ValidationError(f"need embed_dim >= 2 and feature_dim >= embed_dim, got {d}x{F}")
        if not np.all(np.isfinite(self.projection)):
            raise ValidationError("projection contains non-finite entries")

    @property
    def embed_dim(self) -> int:
        return int(self.projection.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.projection.shape[1])

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.projection.copy())


def init_params(feature_dim: int = 4096, embed_dim: int = 64, seed: int = 0) -> EncoderParams:
    """Random Gaussian projection scaled by 1/sqrt(feature_dim)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xE2C])))
    projection = rng.standard_normal((embed_dim, feature_dim)) / np.sqrt(feature_dim)
    return EncoderParams(projection)


def _fallback_vector(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[0] = 1.0
    return e


def encode_features(params: EncoderParams, features: dict[int, float]) -> np.ndarray:
    """Project an already-hashed feature vector to a unit embedding."""
    d = params.embed_dim
    z = np.zeros(d)
    for bucket in sorted(features):
        z += features[bucket] * params.projection[:, bucket]
    if not np.all(np.isfinite(z)):
        raise ValidationError("encoder produced non-finite values; check parameters")
    norm = float(np.linalg.norm(z))
    if norm < 1e-12:
        return _fallback_vector(d)
    return z / norm


def encode(params: EncoderParams, text: str) -> np.ndarray:
    """Unit-norm embedding of `text` under the current parameters."""
    return encode_features(params, hash_features(text, params.feature_dim))


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product of two unit vectors (cosine)."""
    return float(np.dot(a, b))


def encode_features_grad(
    params: EncoderParams, features: dict[int, float], upstream: np.ndarray
) -> np.ndarray:
    """Gradient of dot(upstream, encode_features(...)) w.r.t. the projection.

    Includes the normalization Jacobian (I - e e^T)/||z||; the degenerate-norm
    fallback branch has zero gradient by definition. The result is a dense
    (d, F) matrix that is nonzero only in the touched columns.
    """
    d = params.embed_dim
    z = np.zeros(d)
    buckets = sorted(features)
    for bucket in buckets:
        z += features[bucket] * params.projection[:, bucket]
    norm = float(np.linalg.norm(z))
    grad = np.zeros_like(params.projection)
    if norm < 1e-12:
        return grad
    e = z / norm
    g_z = (upstream - e * np.dot(e, upstream)) / norm
    for bucket in buckets:
        grad[:, bucket] += features[bucket] * g_z
    return grad


def encode_grad(params: EncoderParams, text: str, upstream: np.ndarray) -> np.ndarray:
    """Gradient of dot(upstream, encode(params, text)) w.r.t. the projection."""
    return encode_features_grad(params, hash_features(text, params.feature_dim), upstream)


def embed_corpus(params: EncoderParams, corpus) -> np.ndarray:
    """Encode every corpus node; row i is the embedding of global index i."""
    table = np.zeros((corpus.total_nodes, params.embed_dim))
    row = 0
    for g in corpus.graphs:
        for text in g.node_texts:
            table[row] = encode(params, text)
            row += 1
    return table


def save_encoder(path: str, params: EncoderParams) -> None:
    """Checkpoint: magic, u32 version, u32 d, u32 F, row-major f32 projection."""
    with open(path, "wb") as fh:
        fh.write(ENCODER_MAGIC)
        fh.write(struct.pack("<III", ENCODER_VERSION, params.embed_dim, params.feature_dim))
        fh.write(params.projection.astype("<f4").tobytes())


def load_encoder(path: str) -> EncoderParams:
    """Inverse of save_encoder (f32 storage precision)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ENCODER_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected {ENCODER_MAGIC!r}")
        version, d, F = struct.unpack("<III", fh.read(12))
        if version != ENCODER_VERSION:
            raise ValidationError(f"{path}: unsupported encoder version {version}")
        data = np.frombuffer(fh.read(4 * d * F), dtype="<f4").astype(np.float64)
        if data.size != d * F:
            raise ValidationError(f"{path}: truncated projection payload")
    return EncoderParams(data.reshape(d, F))
