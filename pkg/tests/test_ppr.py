"""Forward-push PPR against the dense power-iteration oracle, plus top-t rules."""

import numpy as np
import pytest

from conftest import complete_graph, make_graph, path_graph, random_graph
from tagembed.errors import ValidationError
from tagembed.ppr import (
    PprScores,
    load_ppr_cache,
    personalized_pagerank,
    ppr_power_iteration,
    save_ppr_cache,
    top_t_by_ppr,
)


def dense_scores(graph, source, restart_prob=0.15):
    return ppr_power_iteration(graph, source, restart_prob)


class TestForwardPush:
    def test_isolated_source_teleport_only(self):
        g = make_graph(1, [])
        sc = personalized_pagerank(g, 0)
        assert sc.scores == {0: 1.0}

    def test_path_matches_dense_oracle(self):
        g = path_graph(3)
        sc = personalized_pagerank(g, 0, restart_prob=0.15, epsilon=1e-8)
        oracle = dense_scores(g, 0)
        for node in range(3):
            assert abs(sc.score(node) - oracle[node]) < 1e-6

    def test_complete_graph_symmetry(self):
        # Non-source nodes are exchangeable; the sequential push resolves them
        # within its residual guarantee (epsilon * degree).
        eps = 1e-8
        g = complete_graph(4)
        sc = personalized_pagerank(g, 2, epsilon=eps)
        others = [sc.score(v) for v in (0, 1, 3)]
        assert max(others) - min(others) <= eps * 3

    def test_push_error_bounded_by_epsilon_times_max_degree(self):
        eps = 1e-4
        for seed in range(12):
            n = 20 + (seed * 13) % 120
            g = random_graph(n, 0.06, seed)
            source = seed % n
            sc = personalized_pagerank(g, source, restart_prob=0.15, epsilon=eps)
            oracle = dense_scores(g, source)
            max_deg = int(g.degrees.max())
            diffs = [abs(sc.score(v) - oracle[v]) for v in range(n)]
            assert max(diffs) <= eps * max_deg

    def test_scores_nonnegative_and_mass_bounded(self):
        g = random_graph(50, 0.1, 3)
        sc = personalized_pagerank(g, 7)
        vals = np.asarray(list(sc.scores.values()))
        assert (vals >= 0).all()
        assert vals.sum() <= 1.0 + 1e-12
        assert sc.score(7) > 0

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        g = random_graph(40, 0.1, 11)
        perm = rng.permutation(40)
        inv = np.argsort(perm)
        remapped_edges = []
        for u in range(40):
            for v in g.neighbors(u):
                if u < int(v):
                    remapped_edges.append((int(perm[u]), int(perm[v])))
        g2 = make_graph(40, remapped_edges)
        # Both runs approximate the same exact solution within eps * deg, so
        # relabeling can move any score by at most twice that.
        eps = 1e-7
        source = 3
        sc1 = personalized_pagerank(g, source, epsilon=eps)
        sc2 = personalized_pagerank(g2, int(perm[source]), epsilon=eps)
        bound = 2 * eps * int(g.degrees.max())
        for v in range(40):
            assert abs(sc1.score(v) - sc2.score(int(perm[v]))) <= bound
        assert inv is not None

    def test_parameter_validation(self):
        g = path_graph(3)
        with pytest.raises(ValidationError):
            personalized_pagerank(g, 5)
        with pytest.raises(ValidationError):
            personalized_pagerank(g, 0, restart_prob=1.5)
        with pytest.raises(ValidationError):
            personalized_pagerank(g, 0, epsilon=0.0)

    def test_deterministic(self):
        g = random_graph(60, 0.08, 9)
        a = personalized_pagerank(g, 4)
        b = personalized_pagerank(g, 4)
        assert a.scores == b.scores


class TestTopT:
    def test_tie_broken_by_id(self):
        sc = PprScores(0, {1: 0.3, 2: 0.3, 3: 0.1}, 0.15, 1e-4)
        assert top_t_by_ppr(sc, [1, 2, 3], 2) == [1, 2]

    def test_t_at_least_candidates_returns_all_sorted(self):
        sc = PprScores(0, {1: 0.1, 2: 0.5, 3: 0.2}, 0.15, 1e-4)
        assert top_t_by_ppr(sc, [1, 2, 3], 10) == [2, 3, 1]

    def test_zero_score_candidates_last_id_ascending(self):
        # Brute-force sort oracle on a random 20-node graph: candidates outside
        # the push's support must trail, ordered by id.
        g = random_graph(20, 0.12, 2)
        sc = personalized_pagerank(g, 0, epsilon=1e-3)
        candidates = list(range(20))
        expected = sorted(candidates, key=lambda c: (-sc.score(c), c))
        assert top_t_by_ppr(sc, candidates, 20) == expected
        zeros = [c for c in candidates if sc.score(c) == 0.0]
        if zeros:
            tail = top_t_by_ppr(sc, candidates, 20)[-len(zeros) :]
            assert tail == sorted(zeros)

    def test_validation(self):
        sc = PprScores(0, {}, 0.15, 1e-4)
        with pytest.raises(ValidationError):
            top_t_by_ppr(sc, [], 1)
        with pytest.raises(ValidationError):
            top_t_by_ppr(sc, [1], 0)

    def test_deterministic_function_of_inputs(self):
        g = random_graph(25, 0.15, 8)
        sc = personalized_pagerank(g, 1)
        out1 = top_t_by_ppr(sc, list(range(25)), 7)
        out2 = top_t_by_ppr(sc, list(range(25)), 7)
        assert out1 == out2


class TestCache:
    def test_roundtrip(self, tmp_path):
        g = random_graph(30, 0.1, 4)
        records = {}
        for v in range(30):
            records[v] = personalized_pagerank(g, v).scores
        path = str(tmp_path / "scores.uppr")
        save_ppr_cache(path, records, 0.15, 1e-4)
        loaded, rp, eps = load_ppr_cache(path)
        assert rp == 0.15 and eps == 1e-4
        assert loaded == records

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.uppr"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(ValidationError, match="bad magic"):
            load_ppr_cache(str(path))
