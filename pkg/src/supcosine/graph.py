"""Graph data model, TU-format dataset I/O, BFS sub-graphs and edge editing."""

from __future__ import annotations

import logging
import os
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

log = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    """Raised when a TU-format file cannot be parsed."""


def _norm_edge(i, j):
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with an ``n x d`` node-attribute matrix.

    ``edges`` holds unordered pairs normalised to ``(min, max)``.
    """

    n: int
    edges: frozenset
    attributes: np.ndarray
    label: int | None = None

    def __post_init__(self):
        edges = frozenset(_norm_edge(int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if i < 0 or j >= self.n:
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
        attrs = np.array(self.attributes, dtype=np.float64)
        if attrs.ndim != 2 or attrs.shape[0] != self.n:
            raise ValueError(f"attributes must be {self.n} x d, got {attrs.shape}")
        attrs.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "attributes", attrs)

    @property
    def d(self) -> int:
        return self.attributes.shape[1]

    @cached_property
    def neighbors(self) -> tuple:
        """Sorted neighbour tuples, one per node."""
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    def sorted_edges(self) -> list:
        return sorted(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def with_label(self, label):
        return Graph(self.n, self.edges, self.attributes, label)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and self.edges == other.edges
            and self.label == other.label
            and np.array_equal(self.attributes, other.attributes)
        )

    __hash__ = object.__hash__


@dataclass(frozen=True)
class Dataset:
    graphs: tuple
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        labels = [g.label for g in self.graphs]
        if any(y is None or not 0 <= y < self.num_classes for y in labels):
            raise ValueError("graph labels must lie in [0, num_classes)")
        if set(labels) != set(range(self.num_classes)):
            raise ValueError("every class needs at least one graph")
        dims = {g.d for g in self.graphs}
        if len(dims) > 1:
            raise ValueError(f"inconsistent attribute dimensions {sorted(dims)}")

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def subset(self, indices) -> "Dataset":
        """Graphs at ``indices``; class count is kept even if a class is absent."""
        return _unchecked_dataset([self.graphs[i] for i in indices], self.num_classes, self.name)

    def replace_graphs(self, graphs) -> "Dataset":
        return Dataset(graphs, self.num_classes, self.name)


def _unchecked_dataset(graphs, num_classes, name):
    ds = object.__new__(Dataset)
    object.__setattr__(ds, "graphs", tuple(graphs))
    object.__setattr__(ds, "num_classes", num_classes)
    object.__setattr__(ds, "name", name)
    return ds


def _read_ints(path, ncols=None):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            toks = [t.strip() for t in line.split(",")]
            try:
                vals = [int(t) for t in toks]
            except ValueError:
                raise DatasetFormatError(f"{os.path.basename(path)}:{lineno}: non-integer token in {line!r}") from None
            if ncols is not None and len(vals) != ncols:
                raise DatasetFormatError(
                    f"{os.path.basename(path)}:{lineno}: expected {ncols} values, got {len(vals)}"
                )
            rows.append((lineno, vals))
    return rows


def load_tu_dataset(directory, name) -> Dataset:
    """Load a dataset in the TU Dortmund plain-text format.

    Node labels, when present, are one-hot encoded into the attribute matrix;
    otherwise each node gets the constant feature 1.0.
    """
    def path(suffix):
        return os.path.join(directory, f"{name}_{suffix}.txt")

    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not os.path.exists(path(suffix)):
            raise FileNotFoundError(f"missing mandatory file {path(suffix)}")

    indicator = [v[0] for _, v in _read_ints(path("graph_indicator"), 1)]
    graph_labels = [v[0] for _, v in _read_ints(path("graph_labels"), 1)]
    num_nodes = len(indicator)
    num_graphs = len(graph_labels)
    for k, gid in enumerate(indicator, 1):
        if not 1 <= gid <= num_graphs:
            raise DatasetFormatError(f"{name}_graph_indicator.txt:{k}: graph id {gid} out of range")

    node_labels = None
    if os.path.exists(path("node_labels")):
        node_labels = [v[0] for _, v in _read_ints(path("node_labels"))]
        if len(node_labels) != num_nodes:
            raise DatasetFormatError(f"{name}_node_labels.txt: {len(node_labels)} rows for {num_nodes} nodes")

    # global node id (0-based) -> (graph index, local index)
    first = {}
    local = np.empty(num_nodes, dtype=np.int64)
    counts = [0] * num_graphs
    for k, gid in enumerate(indicator):
        g = gid - 1
        first.setdefault(g, k)
        local[k] = counts[g]
        counts[g] += 1

    edge_sets = [set() for _ in range(num_graphs)]
    dropped = repeated = 0
    seen = set()
    for lineno, (u, v) in _read_ints(path("A"), 2):
        if not (1 <= u <= num_nodes and 1 <= v <= num_nodes):
            raise DatasetFormatError(f"{name}_A.txt:{lineno}: node index out of range ({u}, {v})")
        gu, gv = indicator[u - 1] - 1, indicator[v - 1] - 1
        if gu != gv:
            raise DatasetFormatError(f"{name}_A.txt:{lineno}: edge crosses graphs {gu + 1} and {gv + 1}")
        a, b = int(local[u - 1]), int(local[v - 1])
        if a == b:
            dropped += 1
            continue
        if (u, v) in seen:
            repeated += 1
        seen.add((u, v))
        edge_sets[gu].add(_norm_edge(a, b))
    if dropped:
        log.warning("%s: dropped %d self-loop lines", name, dropped)
    if repeated:
        log.warning("%s: collapsed %d repeated edge lines", name, repeated)

    if node_labels is not None:
        values = sorted(set(node_labels))
        pos = {v: i for i, v in enumerate(values)}
        onehot = np.zeros((num_nodes, len(values)))
        onehot[np.arange(num_nodes), [pos[v] for v in node_labels]] = 1.0
    else:
        onehot = np.ones((num_nodes, 1))

    classes = sorted(set(graph_labels))
    class_pos = {c: i for i, c in enumerate(classes)}
    order = np.argsort(np.asarray(indicator), kind="stable")
    graphs = []
    start = 0
    for g in range(num_graphs):
        rows = order[start:start + counts[g]]
        start += counts[g]
        graphs.append(Graph(counts[g], frozenset(edge_sets[g]), onehot[rows], class_pos[graph_labels[g]]))
    return Dataset(graphs, len(classes), name)


def save_tu_dataset(dataset: Dataset, directory, name=None) -> None:
    """Write ``dataset`` in TU format; node labels come from one-hot attributes.

    Each undirected edge is written in both directions, as in the original files.
    Attribute matrices that are not one-hot are only supported when d == 1 and
    constant (no node-label file is written).
    """
    name = name or dataset.name
    os.makedirs(directory, exist_ok=True)
    d = dataset.graphs[0].d if dataset.graphs else 1
    onehot = all(
        np.all((g.attributes == 0) | (g.attributes == 1)) and np.all(g.attributes.sum(axis=1) == 1)
        for g in dataset.graphs
    )
    write_node_labels = onehot and d > 1
    if not write_node_labels and not all(np.all(g.attributes == 1.0) for g in dataset.graphs):
        raise ValueError("only one-hot or constant node attributes can be written in TU format")
    offset = 0
    with open(os.path.join(directory, f"{name}_A.txt"), "w") as fa, \
            open(os.path.join(directory, f"{name}_graph_indicator.txt"), "w") as fi, \
            open(os.path.join(directory, f"{name}_graph_labels.txt"), "w") as fl:
        nl = open(os.path.join(directory, f"{name}_node_labels.txt"), "w") if write_node_labels else None
        try:
            for gid, g in enumerate(dataset.graphs, 1):
                for i, j in g.sorted_edges():
                    fa.write(f"{i + offset + 1}, {j + offset + 1}\n")
                    fa.write(f"{j + offset + 1}, {i + offset + 1}\n")
                for v in range(g.n):
                    fi.write(f"{gid}\n")
                    if nl is not None:
                        nl.write(f"{int(np.argmax(g.attributes[v]))}\n")
                fl.write(f"{g.label}\n")
                offset += g.n
        finally:
            if nl is not None:
                nl.close()


@dataclass(frozen=True)
class SubGraphTable:
    """Per-root BFS node lists, each truncated to ``beta`` nodes."""

    beta: int
    members: tuple = field(default_factory=tuple)

    def __getitem__(self, v):
        return self.members[v]

    def __len__(self):
        return len(self.members)


def bfs_subgraphs(g: Graph, beta: int) -> SubGraphTable:
    """BFS from every node, expanding neighbours in ascending index order."""
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    nbrs = g.neighbors
    table = []
    for root in range(g.n):
        order = [root]
        seen = {root}
        queue = deque([root])
        while queue and len(order) < beta:
            u = queue.popleft()
            for w in nbrs[u]:
                if w not in seen:
                    seen.add(w)
                    order.append(w)
                    queue.append(w)
                    if len(order) == beta:
                        break
        table.append(tuple(order))
    return SubGraphTable(beta, tuple(table))


def add_edges(g: Graph, new_edges) -> Graph:
    """Return a copy of ``g`` whose edge set is ``E | new_edges``."""
    extra = set()
    for i, j in new_edges:
        i, j = int(i), int(j)
        if not (0 <= i < g.n and 0 <= j < g.n):
            raise ValueError(f"edge ({i}, {j}) out of range for n={g.n}")
        if i == j:
            raise ValueError(f"self-loop on node {i}")
        extra.add(_norm_edge(i, j))
    if extra <= g.edges:
        return g
    return Graph(g.n, g.edges | extra, g.attributes, g.label)
