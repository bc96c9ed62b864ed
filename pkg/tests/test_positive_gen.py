"""Selection weights, positive aggregation, KL regularizer, and their gradients."""

import numpy as np
import pytest

from conftest import make_graph
from tagembed.encoder import SEPARATOR, encode, init_params, similarity
from tagembed.graph_store import build_corpus, context_description
from tagembed.memory_bank import MemoryBank, init_bank
from tagembed.positive_gen import (
    init_selection_table,
    kl_grad,
    kl_regularizer,
    positive_embedding,
    positive_similarity_aggregate,
    selection_table_grad,
    selection_weights,
    softmax,
)
from tagembed.sampler import PositivePool, build_all_pools


def make_pool(table, page=None, members=None):
    k = len(table)
    if members is None:
        members = list(range(1, k + 1))
    if page is None:
        page = [0.0] * k
    return PositivePool(anchor=0, members=np.asarray(members), page=np.asarray(page), selection_table=np.asarray(table, dtype=float))


def make_bank(rows):
    return MemoryBank(np.asarray(rows, dtype=float))


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestInitSelectionTable:
    def test_identical_texts_give_entry_one(self):
        g0 = make_graph(2, [(0, 1)], texts=["anchor text", "placeholder"])
        corpus0 = build_corpus([g0])
        concat = "anchor text" + SEPARATOR + context_description(corpus0, 0)
        g = make_graph(2, [(0, 1)], texts=["anchor text", concat])
        corpus = build_corpus([g])
        f0 = init_params(128, 8, seed=0)
        pools, _ = build_all_pools(corpus, t=3)
        init_selection_table(pools[0], f0, corpus)
        assert pools[0].selection_table[0] == pytest.approx(1.0, abs=1e-9)

    def test_single_member_softmax_weight_is_one(self):
        g = make_graph(2, [(0, 1)])
        corpus = build_corpus([g])
        f0 = init_params(128, 8, seed=1)
        pools, _ = build_all_pools(corpus, t=3)
        init_selection_table(pools[0], f0, corpus)
        assert selection_weights(pools[0]) == pytest.approx([1.0])

    def test_entries_match_independent_encode_dot(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            n = int(rng.integers(4, 10))
            edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
            if not edges:
                edges = [(0, 1)]
            texts = [" ".join(f"w{rng.integers(50)}" for _ in range(6)) for _ in range(n)]
            g = make_graph(n, edges, texts=texts, graph_id=f"g{trial}")
            corpus = build_corpus([g])
            f0 = init_params(256, 8, seed=trial)
            pools, _ = build_all_pools(corpus, t=4)
            v = int(sorted(pools)[int(rng.integers(len(pools)))])
            pool = pools[v]
            init_selection_table(pool, f0, corpus)
            anchor_vec = encode(
                f0, corpus.node_text(v) + SEPARATOR + context_description(corpus, v)
            )
            for k, m in enumerate(pool.members):
                expected = float(np.dot(anchor_vec, encode(f0, corpus.node_text(int(m)))))
                assert pool.selection_table[k] == pytest.approx(expected, abs=1e-12)
                assert -1.0 - 1e-9 <= pool.selection_table[k] <= 1.0 + 1e-9

    def test_precomputed_member_embeddings_equivalent(self):
        g = make_graph(4, [(0, 1), (0, 2), (0, 3)])
        corpus = build_corpus([g])
        f0 = init_params(128, 8, seed=3)
        pools, _ = build_all_pools(corpus, t=3)
        bank = init_bank(corpus, f0)
        a = pools[0]
        b = PositivePool(a.anchor, a.members.copy(), a.page.copy(), a.selection_table.copy())
        init_selection_table(a, f0, corpus)
        init_selection_table(b, f0, corpus, member_embeddings=bank.table)
        assert np.array_equal(a.selection_table, b.selection_table)


class TestPositiveEmbedding:
    def test_uniform_table_gives_mean(self):
        rows = np.vstack([unit([1, 0, 0]), unit([0, 1, 0]), unit([0, 0, 1]), unit([1, 1, 1])])
        bank = make_bank(rows)
        pool = make_pool([2.5, 2.5, 2.5], members=[0, 1, 2])
        out = positive_embedding(pool, bank)
        assert np.allclose(out, rows[:3].mean(axis=0), atol=1e-12)

    def test_softmax_saturation_picks_single_row(self):
        rows = np.vstack([unit([1, 0]), unit([0, 1]), unit([1, 1])])
        bank = make_bank(rows)
        pool = make_pool([50.0, 0.0, 0.0], members=[1, 2, 0])
        out = positive_embedding(pool, bank)
        assert np.allclose(out, rows[1], atol=1e-9)

    def test_log_table_closed_form_weights(self):
        # table [0, ln2, ln4] -> weights [1/7, 2/7, 4/7]
        rows = np.vstack([unit([1, 0, 0]), unit([0, 1, 0]), unit([0, 0, 1])])
        bank = make_bank(rows)
        pool = make_pool([0.0, np.log(2.0), np.log(4.0)], members=[0, 1, 2])
        w = selection_weights(pool)
        assert w == pytest.approx([1 / 7, 2 / 7, 4 / 7], abs=1e-12)
        expected = (1 / 7) * rows[0] + (2 / 7) * rows[1] + (4 / 7) * rows[2]
        assert positive_embedding(pool, bank) == pytest.approx(expected, abs=1e-12)

    def test_convex_hull_barycentric(self):
        rng = np.random.default_rng(7)
        rows = np.vstack([unit(rng.standard_normal(6)) for _ in range(4)])
        bank = make_bank(rows)
        pool = make_pool(rng.standard_normal(4), members=[0, 1, 2, 3])
        out = positive_embedding(pool, bank)
        # Solve for barycentric coordinates (sum to one) and check they are a
        # valid convex combination reproducing the mixture.
        A = np.vstack([rows.T, np.ones(4)])
        b = np.concatenate([out, [1.0]])
        coeffs, *_ = np.linalg.lstsq(A, b, rcond=None)
        assert np.allclose(A @ coeffs, b, atol=1e-9)
        assert np.all(coeffs >= -1e-9) and np.all(coeffs <= 1.0 + 1e-9)


class TestKl:
    def test_zero_when_table_equals_page(self):
        rng = np.random.default_rng(8)
        page = rng.standard_normal(5)
        pool = make_pool(page.copy(), page=page)
        assert kl_regularizer(pool) == 0.0

    def test_single_member_zero(self):
        pool = make_pool([3.7], page=[0.01])
        assert kl_regularizer(pool) == 0.0

    def test_hand_computed_value(self):
        # p = [0.7, 0.3], q = [0.5, 0.5]
        pool = make_pool([np.log(0.7), np.log(0.3)], page=[1.0, 1.0])
        expected = 0.7 * np.log(0.7 / 0.5) + 0.3 * np.log(0.3 / 0.5)
        assert kl_regularizer(pool) == pytest.approx(expected, abs=1e-12)
        assert kl_regularizer(pool) == pytest.approx(0.08228, abs=5e-6)

    def test_nonnegative_random_sweep(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            k = int(rng.integers(1, 8))
            pool = make_pool(rng.standard_normal(k) * 3, page=rng.random(k))
            assert kl_regularizer(pool) >= 0.0

    def test_shift_invariance(self):
        rng = np.random.default_rng(10)
        rows = np.vstack([unit(rng.standard_normal(5)) for _ in range(3)])
        bank = make_bank(rows)
        table = rng.standard_normal(3)
        page = rng.random(3)
        a = make_pool(table, page=page, members=[0, 1, 2])
        b = make_pool(table + 11.25, page=page, members=[0, 1, 2])
        assert np.allclose(selection_weights(a), selection_weights(b), atol=1e-12)
        assert np.allclose(positive_embedding(a, bank), positive_embedding(b, bank), atol=1e-12)
        assert kl_regularizer(a) == pytest.approx(kl_regularizer(b), abs=1e-12)


class TestSimilarityAggregate:
    def test_single_member_equals_plain_similarity(self):
        rows = np.vstack([unit([0.3, -0.4, 0.5])])
        bank = make_bank(rows)
        pool = make_pool([2.0], members=[0])
        anchor = unit([1.0, 1.0, 0.0])
        assert positive_similarity_aggregate(pool, bank, anchor) == pytest.approx(
            similarity(anchor, rows[0]), abs=1e-12
        )

    def test_identical_members_weight_independent(self):
        row = unit([0.2, 0.9, -0.1])
        bank = make_bank(np.vstack([row, row, row]))
        anchor = unit([0.5, -0.5, 0.7])
        for table in ([0, 0, 0], [5, -1, 2], [10, 10, -10]):
            pool = make_pool(table, members=[0, 1, 2])
            assert positive_similarity_aggregate(pool, bank, anchor) == pytest.approx(
                similarity(anchor, row), abs=1e-12
            )

    def test_both_aggregation_orders_match_their_closed_forms(self):
        # Order 1: cosine between the anchor and the weighted mixture (the
        # mixture norm in the denominator). Order 2: weighted per-member
        # cosines. Both evaluated independently from raw vectors.
        rng = np.random.default_rng(11)
        rows = np.vstack([unit(rng.standard_normal(5)) for _ in range(4)])
        bank = make_bank(rows)
        pool = make_pool(rng.standard_normal(4), members=[0, 1, 2, 3])
        anchor = unit(rng.standard_normal(5))
        w = softmax(pool.selection_table)

        mixture = sum(w[k] * rows[k] for k in range(4))
        gram = rows @ rows.T
        denom = np.sqrt(sum(w[i] * w[j] * gram[i, j] for i in range(4) for j in range(4)))
        closed_form_1 = float(anchor @ mixture) / denom
        module_mixture = positive_embedding(pool, bank)
        assert float(anchor @ module_mixture) / np.linalg.norm(module_mixture) == pytest.approx(
            closed_form_1, abs=1e-10
        )

        closed_form_2 = sum(w[k] * float(anchor @ rows[k]) / np.linalg.norm(rows[k]) for k in range(4))
        assert positive_similarity_aggregate(pool, bank, anchor) == pytest.approx(
            closed_form_2, abs=1e-12
        )

    def test_equals_default_when_members_identical(self):
        row = unit([1.0, 2.0, 2.0])
        bank = make_bank(np.vstack([row, row]))
        pool = make_pool([0.7, -0.2], members=[0, 1])
        anchor = unit([0.0, 1.0, 0.0])
        mixture = positive_embedding(pool, bank)
        default_value = float(anchor @ mixture) / np.linalg.norm(mixture)
        assert positive_similarity_aggregate(pool, bank, anchor) == pytest.approx(
            default_value, abs=1e-12
        )


class TestSelectionTableGrad:
    def test_gradient_components_sum_to_zero(self):
        # The softmax Jacobian annihilates the all-ones direction.
        rng = np.random.default_rng(12)
        rows = np.vstack([unit(rng.standard_normal(4)) for _ in range(3)])
        bank = make_bank(rows)
        pool = make_pool([1.0, 1.0, 1.0], page=[1.0, 1.0, 1.0], members=[0, 1, 2])
        g = selection_table_grad(pool, bank, rng.standard_normal(4), alpha=0.3)
        assert abs(g.sum()) < 1e-12

    def test_finite_difference(self):
        rng = np.random.default_rng(13)
        rows = np.vstack([unit(rng.standard_normal(6)) for _ in range(5)])
        bank = make_bank(rows)
        upstream = rng.standard_normal(6)
        alpha = 0.37
        table = rng.standard_normal(5)
        page = rng.random(5)
        pool = make_pool(table, page=page, members=list(range(5)))
        analytic = selection_table_grad(pool, bank, upstream, alpha=alpha)

        def objective(tbl):
            p = make_pool(tbl, page=page, members=list(range(5)))
            return float(np.dot(upstream, positive_embedding(p, bank))) + alpha * kl_regularizer(p)

        h = 1e-6
        for k in range(5):
            bumped = table.copy()
            bumped[k] += h
            up = objective(bumped)
            bumped[k] -= 2 * h
            dn = objective(bumped)
            numeric = (up - dn) / (2 * h)
            denom = max(abs(analytic[k]), abs(numeric), 1e-8)
            assert abs(analytic[k] - numeric) / denom < 1e-4

    def test_alpha_zero_drops_kl_term(self):
        rng = np.random.default_rng(14)
        rows = np.vstack([unit(rng.standard_normal(4)) for _ in range(3)])
        bank = make_bank(rows)
        pool = make_pool(rng.standard_normal(3), page=rng.random(3), members=[0, 1, 2])
        upstream = rng.standard_normal(4)
        g0 = selection_table_grad(pool, bank, upstream, alpha=0.0)
        g1 = selection_table_grad(pool, bank, upstream, alpha=1.0)
        assert np.allclose(g1 - g0, kl_grad(pool), atol=1e-12)
        assert not np.allclose(g0, g1)
