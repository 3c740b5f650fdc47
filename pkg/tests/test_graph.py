import logging
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from supcosine.graph import (
    Dataset,
    DatasetFormatError,
    Graph,
    add_edges,
    bfs_subgraphs,
    load_tu_dataset,
    save_tu_dataset,
)

from conftest import PTC_DIR, path_graph


def write_tu(tmp_path, name, A, indicator, labels, node_labels=None):
    d = tmp_path / name
    d.mkdir()
    (d / f"{name}_A.txt").write_text("".join(f"{u}, {v}\n" for u, v in A))
    (d / f"{name}_graph_indicator.txt").write_text("".join(f"{g}\n" for g in indicator))
    (d / f"{name}_graph_labels.txt").write_text("".join(f"{y}\n" for y in labels))
    if node_labels is not None:
        (d / f"{name}_node_labels.txt").write_text("".join(f"{x}\n" for x in node_labels))
    return d


@st.composite
def graphs(draw, max_n=9):
    n = draw(st.integers(1, max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = draw(st.sets(st.sampled_from(pairs), max_size=len(pairs))) if pairs else set()
    return Graph(n, frozenset(edges), np.ones((n, 1)), 0)


class TestGraph:
    def test_edges_are_normalised(self):
        g = Graph(3, {(1, 0), (2, 1)}, np.zeros((3, 2)))
        assert g.edges == {(0, 1), (1, 2)}
        assert g.neighbors == ((1,), (0, 2), (1,))

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            Graph(2, {(1, 1)}, np.ones((2, 1)))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            Graph(2, {(0, 2)}, np.ones((2, 1)))

    def test_attribute_rows_must_match(self):
        with pytest.raises(ValueError):
            Graph(3, set(), np.ones((2, 1)))

    def test_attributes_read_only(self):
        g = path_graph(3)
        with pytest.raises(ValueError):
            g.attributes[0, 0] = 5.0

    def test_adjacency_symmetric(self):
        a = path_graph(4).adjacency()
        np.testing.assert_array_equal(a, a.T)
        assert a.sum() == 6


class TestDataset:
    def test_label_range_checked(self):
        with pytest.raises(ValueError):
            Dataset([path_graph(2, label=2)], 2)

    def test_every_class_present(self):
        with pytest.raises(ValueError, match="every class"):
            Dataset([path_graph(2, label=0)], 2)

    def test_dims_consistent(self):
        with pytest.raises(ValueError, match="dimensions"):
            Dataset([path_graph(2, d=1, label=0), path_graph(2, d=2, label=1)], 2)


class TestLoadTU:
    def test_mutag_statistics(self, mutag):
        assert len(mutag) == 188
        assert mutag.num_classes == 2
        assert mutag.graphs[0].d == 7
        assert np.bincount(mutag.labels).tolist() == [63, 125]

    def test_mutag_attributes_one_hot(self, mutag):
        for g in mutag.graphs[:20]:
            np.testing.assert_array_equal(g.attributes.sum(axis=1), 1.0)

    def test_ptc_statistics(self):
        if not os.path.isdir(PTC_DIR):
            pytest.skip("PTC_MR files not present")
        ds = load_tu_dataset(PTC_DIR, "PTC_MR")
        assert (len(ds), ds.num_classes, ds.graphs[0].d) == (344, 2, 19)

    def test_constant_feature_fallback(self, tmp_path):
        d = write_tu(tmp_path, "T", [(1, 2), (2, 1), (2, 3), (3, 2)], [1, 1, 1], [5])
        ds = load_tu_dataset(d, "T")
        np.testing.assert_array_equal(ds[0].attributes, np.ones((3, 1)))
        assert ds[0].edges == {(0, 1), (1, 2)}
        assert ds[0].label == 0

    def test_labels_remapped_contiguous(self, tmp_path):
        d = write_tu(tmp_path, "T", [], [1, 2, 3], [-1, 1, -1])
        ds = load_tu_dataset(d, "T")
        assert ds.labels.tolist() == [0, 1, 0]

    def test_local_indices_per_graph(self, tmp_path):
        d = write_tu(tmp_path, "T", [(1, 2), (3, 4), (4, 5)], [1, 1, 2, 2, 2], [0, 1], [0, 1, 1, 0, 2])
        ds = load_tu_dataset(d, "T")
        assert ds[0].edges == {(0, 1)} and ds[1].edges == {(0, 1), (1, 2)}
        assert ds[1].d == 3
        np.testing.assert_array_equal(ds[1].attributes, [[0, 1, 0], [1, 0, 0], [0, 0, 1]])

    def test_self_loops_and_repeats_dropped_with_warning(self, tmp_path, caplog):
        d = write_tu(tmp_path, "T", [(1, 1), (1, 2), (1, 2), (2, 1)], [1, 1], [0])
        with caplog.at_level(logging.WARNING):
            ds = load_tu_dataset(d, "T")
        assert ds[0].edges == {(0, 1)}
        assert "self-loop" in caplog.text and "repeated" in caplog.text

    def test_missing_file(self, tmp_path):
        d = write_tu(tmp_path, "T", [], [1], [0])
        os.remove(d / "T_graph_labels.txt")
        with pytest.raises((FileNotFoundError, DatasetFormatError)):
            load_tu_dataset(d, "T")

    def test_bad_token_names_file_and_line(self, tmp_path):
        d = write_tu(tmp_path, "T", [(1, 2)], [1, 1], [0])
        (d / "T_A.txt").write_text("1, 2\n2, x\n")
        with pytest.raises(DatasetFormatError, match=r"T_A.txt:2"):
            load_tu_dataset(d, "T")

    def test_index_out_of_range(self, tmp_path):
        d = write_tu(tmp_path, "T", [(1, 9)], [1, 1], [0])
        with pytest.raises(DatasetFormatError, match="out of range"):
            load_tu_dataset(d, "T")

    def test_round_trip(self, tmp_path, mutag):
        save_tu_dataset(mutag, tmp_path / "out")
        again = load_tu_dataset(tmp_path / "out", "MUTAG")
        assert again.num_classes == mutag.num_classes
        assert all(a == b for a, b in zip(again.graphs, mutag.graphs))

    def test_round_trip_constant_features(self, tmp_path):
        ds = Dataset([path_graph(3, label=0), path_graph(2, label=1)], 2, "P")
        save_tu_dataset(ds, tmp_path / "p")
        assert not (tmp_path / "p" / "P_node_labels.txt").exists()
        again = load_tu_dataset(tmp_path / "p", "P")
        assert all(a == b for a, b in zip(again.graphs, ds.graphs))


class TestBFS:
    def test_path_root_two(self):
        table = bfs_subgraphs(path_graph(5), 3)
        assert table[2] == (2, 1, 3)

    def test_beta_one_is_root(self):
        table = bfs_subgraphs(path_graph(4), 1)
        assert [t for t in table.members] == [(0,), (1,), (2,), (3,)]

    def test_triangle_whole_component(self):
        g = Graph(3, {(0, 1), (1, 2), (0, 2)}, np.ones((3, 1)))
        assert set(bfs_subgraphs(g, 5)[0]) == {0, 1, 2}

    def test_ascending_tie_break(self):
        star = Graph(5, {(0, 4), (0, 2), (0, 3), (0, 1)}, np.ones((5, 1)))
        assert bfs_subgraphs(star, 3)[0] == (0, 1, 2)

    def test_beta_zero_rejected(self):
        with pytest.raises(ValueError):
            bfs_subgraphs(path_graph(2), 0)

    @settings(max_examples=60, deadline=None)
    @given(graphs(), st.integers(1, 10))
    def test_table_invariants(self, g, beta):
        table = bfs_subgraphs(g, beta)
        assert table == bfs_subgraphs(g, beta)
        comp = _components(g)
        for v in range(g.n):
            members = table[v]
            assert members[0] == v
            assert len(members) == len(set(members)) <= beta
            assert set(members) <= comp[v]
            if beta >= g.n:
                assert set(members) == comp[v]


def _components(g):
    comp = {}
    for s in range(g.n):
        if s in comp:
            continue
        seen, stack = {s}, [s]
        while stack:
            u = stack.pop()
            for w in g.neighbors[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        for v in seen:
            comp[v] = seen
    return comp


class TestAddEdges:
    def test_union(self):
        g = Graph(3, {(0, 1)}, np.ones((3, 1)), 1)
        h = add_edges(g, [(2, 1)])
        assert h.edges == {(0, 1), (1, 2)} and h.label == 1
        np.testing.assert_array_equal(h.attributes, g.attributes)

    def test_idempotent(self):
        g = Graph(3, {(0, 1)}, np.ones((3, 1)))
        assert add_edges(g, [(1, 0)]).edges == {(0, 1)}

    def test_empty(self):
        g = path_graph(3)
        assert add_edges(g, []) == g

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            add_edges(path_graph(3), [(0, 3)])

    @settings(max_examples=50, deadline=None)
    @given(graphs(), st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=6))
    def test_superset_and_growth_bound(self, g, pairs):
        pairs = [(i, j) for i, j in pairs if i < g.n and j < g.n and i != j]
        h = add_edges(g, pairs)
        assert g.edges <= h.edges
        assert len(h.edges) - len(g.edges) <= len(pairs)
