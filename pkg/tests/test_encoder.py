"""Hashing, encoding, similarity, and analytic gradients of the text encoder."""

from functools import reduce

import numpy as np
import pytest

from tagembed.encoder import (
    EMPTY_TOKEN,
    EncoderParams,
    encode,
    encode_grad,
    fnv1a64,
    hash_features,
    init_params,
    load_encoder,
    save_encoder,
    similarity,
)
from tagembed.errors import ValidationError


def fnv1a64_reference(data: bytes) -> int:
    """Independent fold-based FNV-1a for cross-checking."""
    return reduce(
        lambda h, b: ((h ^ b) * 0x100000001B3) % 2**64, data, 0xCBF29CE484222325
    )


class TestFnv1a:
    def test_published_vectors(self):
        # Reference vectors from the FNV specification page.
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8

    def test_matches_independent_implementation(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            data = bytes(rng.integers(0, 256, size=rng.integers(0, 40)))
            assert fnv1a64(data) == fnv1a64_reference(data)


class TestHashFeatures:
    def test_empty_text_reserved_term(self):
        feats = hash_features("", 128)
        assert feats == {fnv1a64(EMPTY_TOKEN.encode()) % 128: 1.0}
        assert hash_features("   \t\n", 128) == feats

    def test_repeated_unigram_plus_bigram(self):
        feats = hash_features("a a", 1 << 20)
        uni = fnv1a64(b"a") % (1 << 20)
        bi = fnv1a64(b"a a") % (1 << 20)
        # counts (2, 1) normalized by sqrt(5)
        assert feats[uni] == pytest.approx(2 / np.sqrt(5))
        assert feats[bi] == pytest.approx(1 / np.sqrt(5))
        assert np.sqrt(sum(w * w for w in feats.values())) == pytest.approx(1.0)

    def test_lowercase_and_split_on_non_alphanumerics(self):
        assert hash_features("Hello, WORLD!", 997) == hash_features("hello world", 997)

    def test_golden_buckets(self):
        # Frozen against the independent FNV implementation.
        feats = hash_features("graph node", 4096)
        expected_terms = ["graph", "node", "graph node"]
        expected = {}
        for term in expected_terms:
            b = fnv1a64_reference(term.encode()) % 4096
            expected[b] = expected.get(b, 0.0) + 1.0
        norm = np.sqrt(sum(v * v for v in expected.values()))
        expected = {b: v / norm for b, v in expected.items()}
        assert feats == expected

    def test_stable_across_calls(self):
        text = "Ulysses, a novel by James Joyce (1922)."
        assert hash_features(text, 4096) == hash_features(text, 4096)


class TestEncode:
    def test_identity_projection_returns_features(self):
        F = 32
        params = EncoderParams(np.eye(F))
        feats = hash_features("alpha beta", F)
        vec = encode(params, "alpha beta")
        dense = np.zeros(F)
        for b, w in feats.items():
            dense[b] = w
        assert np.allclose(vec, dense)

    def test_unit_norm(self):
        params = init_params(256, 16, seed=3)
        for text in ["", "one", "a much longer text with many words", "7 8 9"]:
            assert abs(np.linalg.norm(encode(params, text)) - 1.0) < 1e-6

    def test_disjoint_token_cosines_strictly_inside_unit(self):
        params = init_params(512, 24, seed=4)
        rng = np.random.default_rng(5)
        for i in range(100):
            a = " ".join(f"left{rng.integers(1000)}" for _ in range(5))
            b = " ".join(f"right{rng.integers(1000)}" for _ in range(5))
            cos = similarity(encode(params, a), encode(params, b))
            assert abs(cos) < 1.0

    def test_degenerate_norm_fallback(self):
        F = 16
        params = EncoderParams(np.zeros((4, F)) + np.eye(4, F) * 0.0 + 1e-300)
        # all-tiny projection drives the pre-normalization vector under 1e-12
        vec = encode(params, "anything")
        assert vec[0] == 1.0 and np.all(vec[1:] == 0.0)

    def test_non_finite_projection_rejected(self):
        bad = np.zeros((4, 8))
        bad[0, 0] = np.nan
        with pytest.raises(ValidationError):
            EncoderParams(bad)

    def test_shape_validation(self):
        with pytest.raises(ValidationError):
            EncoderParams(np.zeros((1, 8)))  # d < 2
        with pytest.raises(ValidationError):
            EncoderParams(np.zeros((8, 4)))  # F < d


class TestSimilarity:
    def test_self_similarity_is_one(self):
        params = init_params(128, 8, seed=1)
        e = encode(params, "self similar")
        assert similarity(e, e) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_basis(self):
        a = np.zeros(4)
        b = np.zeros(4)
        a[0] = 1.0
        b[2] = 1.0
        assert similarity(a, b) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a = rng.standard_normal(6)
            a /= np.linalg.norm(a)
            b = rng.standard_normal(6)
            b /= np.linalg.norm(b)
            assert similarity(a, b) == similarity(b, a)


class TestEncodeGrad:
    def test_zero_upstream_zero_gradient(self):
        params = init_params(64, 8, seed=2)
        g = encode_grad(params, "some text", np.zeros(8))
        assert np.all(g == 0.0)

    def test_finite_difference_match(self):
        params = init_params(32, 8, seed=7)
        rng = np.random.default_rng(11)
        text = "gradient check text with a few words"
        upstream = rng.standard_normal(8)
        analytic = encode_grad(params, text, upstream)
        h = 1e-5
        max_rel = 0.0
        for i in range(8):
            for j in range(32):
                base = params.projection[i, j]
                params.projection[i, j] = base + h
                up = float(np.dot(upstream, encode(params, text)))
                params.projection[i, j] = base - h
                dn = float(np.dot(upstream, encode(params, text)))
                params.projection[i, j] = base
                numeric = (up - dn) / (2 * h)
                denom = max(abs(analytic[i, j]), abs(numeric), 1e-8)
                max_rel = max(max_rel, abs(analytic[i, j] - numeric) / denom)
        assert max_rel < 1e-4

    def test_linearity_in_upstream(self):
        params = init_params(64, 8, seed=8)
        rng = np.random.default_rng(13)
        upstream = rng.standard_normal(8)
        g1 = encode_grad(params, "linear", upstream)
        g3 = encode_grad(params, "linear", 3.0 * upstream)
        assert np.allclose(g3, 3.0 * g1, atol=1e-14)

    def test_fallback_branch_zero_gradient(self):
        params = EncoderParams(np.full((4, 16), 1e-300))
        g = encode_grad(params, "text", np.ones(4))
        assert np.all(g == 0.0)


class TestCheckpoint:
    def test_roundtrip_is_f32_precision(self, tmp_path):
        params = init_params(128, 16, seed=5)
        path = str(tmp_path / "enc.bin")
        save_encoder(path, params)
        loaded = load_encoder(path)
        assert loaded.embed_dim == 16 and loaded.feature_dim == 128
        assert np.array_equal(
            loaded.projection, params.projection.astype("<f4").astype(np.float64)
        )

    def test_save_is_deterministic(self, tmp_path):
        params = init_params(64, 8, seed=6)
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        save_encoder(p1, params)
        save_encoder(p2, params)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValidationError, match="bad magic"):
            load_encoder(str(path))
