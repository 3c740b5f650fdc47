import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.stats import chisquare

from supcosine.cascades import (
    NEVER,
    Cascade,
    CascadeSet,
    format_cascades,
    parse_cascades,
    simulate_cascade,
    simulate_cascades,
)
from supcosine.graph import Graph

from conftest import path_graph, random_graph


def complete(n):
    return Graph(n, {(i, j) for i in range(n) for j in range(i + 1, n)}, np.ones((n, 1)))


def check_invariants(g, c, T):
    t = c.times
    assert t[c.root] == 0.0
    assert np.sum(t == 0.0) == 1
    finite = np.isfinite(t)
    assert np.all(t[finite] <= T)
    for v in np.flatnonzero(finite):
        if v != c.root:
            assert any(t[u] < t[v] for u in g.neighbors[v])


class TestSimulateCascade:
    def test_isolated_node(self, rng):
        g = Graph(1, set(), np.ones((1, 1)))
        c = simulate_cascade(g, 5.0, rng)
        assert c.root == 0 and c.times.tolist() == [0.0]

    def test_zero_window(self, rng):
        c = simulate_cascade(path_graph(4), 0.0, rng)
        assert np.isfinite(c.times).sum() == 1

    def test_two_components(self):
        g = Graph(4, {(0, 1), (2, 3)}, np.ones((4, 1)))
        for k in range(20):
            c = simulate_cascade(g, 100.0, np.random.default_rng(k))
            other = [2, 3] if c.root in (0, 1) else [0, 1]
            assert np.all(c.times[other] == NEVER)

    def test_negative_window(self, rng):
        with pytest.raises(ValueError):
            simulate_cascade(path_graph(2), -1.0, rng)

    def test_matches_dijkstra_oracle(self):
        g = random_graph(12, 0.3, np.random.default_rng(3))
        T = 2.0
        for k in range(30):
            c = simulate_cascade(g, T, np.random.default_rng(k))
            # replay the same draws and solve shortest paths independently
            r = np.random.default_rng(k)
            root = int(r.integers(g.n))
            edges = g.sorted_edges()
            w = r.exponential(1.0, size=len(edges))
            rows = [i for i, _ in edges] + [j for _, j in edges]
            cols = [j for _, j in edges] + [i for i, _ in edges]
            dist = dijkstra(csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(g.n, g.n)),
                            indices=root) if edges else np.where(np.arange(g.n) == root, 0.0, np.inf)
            expected = np.where(dist <= T, dist, np.inf)
            assert c.root == root
            np.testing.assert_allclose(c.times, expected, rtol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10), st.floats(0.0, 1.0), st.integers(0, 10_000), st.floats(0.0, 5.0))
    def test_invariants_hold(self, n, p, seed, T):
        g = random_graph(n, p, np.random.default_rng(seed))
        check_invariants(g, simulate_cascade(g, T, np.random.default_rng(seed + 1)), T)


class TestSimulateCascades:
    def test_deterministic(self):
        g = random_graph(6, 0.5, np.random.default_rng(0))
        assert simulate_cascades(g, 3, 10.0, 7) == simulate_cascades(g, 3, 10.0, 7)

    def test_seed_changes_output(self):
        g = complete(5)
        assert simulate_cascades(g, 5, 10.0, 1) != simulate_cascades(g, 5, 10.0, 2)

    def test_complete_k3_mostly_full(self):
        cs = simulate_cascades(complete(3), 1000, 10.0, 0)
        full = np.mean([np.isfinite(c.times).all() for c in cs])
        assert full > 0.95

    def test_edgeless_root_only(self):
        cs = simulate_cascades(Graph(4, set(), np.ones((4, 1))), 25, 10.0, 0)
        assert all(np.isfinite(c.times).sum() == 1 for c in cs)

    def test_zero_q(self):
        with pytest.raises(ValueError):
            simulate_cascades(path_graph(3), 0, 1.0, 0)

    def test_root_uniform(self):
        g = random_graph(10, 0.3, np.random.default_rng(1))
        roots = [c.root for c in simulate_cascades(g, 10_000, 1.0, 11)]
        assert chisquare(np.bincount(roots, minlength=10)).pvalue > 0.01

    def test_chains_strictly_increasing(self):
        g = random_graph(9, 0.4, np.random.default_rng(5))
        for c in simulate_cascades(g, 50, 10.0, 3):
            check_invariants(g, c, 10.0)


class TestCascadeSet:
    def test_requires_cascades(self):
        with pytest.raises(ValueError):
            CascadeSet([], 1.0)

    def test_shared_n(self):
        with pytest.raises(ValueError):
            CascadeSet([Cascade([0.0], 0), Cascade([0.0, 1.0], 0)], 1.0)

    def test_time_matrix(self):
        cs = CascadeSet([Cascade([0.0, 0.5], 0), Cascade([NEVER, 0.0], 1)], 1.0)
        np.testing.assert_array_equal(cs.time_matrix(), [[0.0, 0.5], [np.inf, 0.0]])


class TestDumpFormat:
    def test_format(self):
        cs = CascadeSet([Cascade([0.25, 0.0, NEVER], 1)], 1.0)
        assert format_cascades(cs) == "1;1:0.000000,0:0.250000\n"

    def test_round_trip(self):
        g = random_graph(7, 0.4, np.random.default_rng(2))
        cs = simulate_cascades(g, 20, 3.0, 4)
        back = parse_cascades(format_cascades(cs), g.n, 3.0)
        assert [c.root for c in back] == [c.root for c in cs]
        np.testing.assert_allclose(back.time_matrix(), cs.time_matrix(), atol=5e-7)

    def test_bad_line(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_cascades("0;0:0.0\nbogus\n", 2, 1.0)
