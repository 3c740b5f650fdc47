"""Hierarchical GNN: BFS sub-graph initialisation, local aggregation layers,
top-k pooling onto a coarse graph of sub-graph super nodes, mean readout and
a softmax classifier.

Graphs are processed in batches by stacking node rows and using
block-diagonal sparse operators, so one tape covers a whole mini-batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .graph import Graph, SubGraphTable, bfs_subgraphs

CHECKPOINT_VERSION = 1


class DegenerateProjectionError(ValueError):
    pass


@dataclass
class ModelConfig:
    in_dim: int
    num_classes: int
    beta: int = 5
    layers: int = 5
    hidden: int = 16
    super_dim: int = 16
    graph_dim: int = 16
    pool_ratio: float = 0.5
    epsilon: int = 1
    gamma: float = 0.0


@dataclass
class ModelParams:
    """Named parameter matrices plus the config that shaped them."""

    config: ModelConfig
    arrays: dict = field(default_factory=dict)

    def names(self):
        return list(self.arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self):
        return ModelParams(ModelConfig(**asdict(self.config)), {k: v.copy() for k, v in self.arrays.items()})

    def on_tape(self, tape, requires_grad=True) -> dict:
        return {k: tape.var(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def save(self, path):
        """Write an ``.npz`` checkpoint: one array per parameter plus a JSON header."""
        header = json.dumps({"version": CHECKPOINT_VERSION, "config": asdict(self.config),
                             "names": self.names()}, sort_keys=True)
        with open(path, "wb") as fh:
            np.savez(fh, __header__=np.array(header), **{f"p:{k}": v for k, v in self.arrays.items()})

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            arrays = {k: z[f"p:{k}"].copy() for k in header["names"]}
        return cls(ModelConfig(**header["config"]), arrays)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed=0) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights and biases, standard-normal pooling vector."""
    rng = np.random.default_rng(seed)
    h = cfg.hidden
    arrays = {}

    def mlp(prefix, fan_in):
        arrays[f"{prefix}.w1"] = _uniform(rng, fan_in, (fan_in, h))
        arrays[f"{prefix}.b1"] = _uniform(rng, fan_in, (1, h))
        arrays[f"{prefix}.w2"] = _uniform(rng, h, (h, h))
        arrays[f"{prefix}.b2"] = _uniform(rng, h, (1, h))

    mlp("init", cfg.in_dim)
    for layer in range(1, cfg.layers + 1):
        mlp(f"la{layer}", h)
    arrays["pool.w"] = rng.normal(0.0, 1.0, size=(h, 1))
    arrays["super.W"] = _uniform(rng, h, (cfg.super_dim, h))
    arrays["readout.W"] = _uniform(rng, cfg.super_dim, (cfg.graph_dim, cfg.super_dim))
    arrays["cls.W"] = _uniform(rng, cfg.graph_dim, (cfg.num_classes, cfg.graph_dim))
    arrays["cls.b"] = _uniform(rng, cfg.graph_dim, (1, cfg.num_classes))
    return ModelParams(cfg, arrays)


# --- per-graph structure ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class GraphPlan:
    """Parameter-independent structure for one graph (index pairs, not matrices)."""

    graph: Graph
    table: SubGraphTable
    adj_index: np.ndarray       # 2 x nnz, both directions of every edge
    sub_index: np.ndarray       # 2 x nnz, (v, u) for u in S(v), u != v
    overlap: np.ndarray         # n x n, |S(v) & S(u)|


def _csr(index, shape):
    return sp.csr_matrix((np.ones(index.shape[1]), (index[0], index[1])), shape=shape)


def _subgraph_index(table: SubGraphTable) -> np.ndarray:
    pairs = [(v, u) for v, members in enumerate(table.members) for u in members if u != v]
    return np.array(pairs, dtype=np.int64).reshape(-1, 2).T


def _adjacency_index(g: Graph) -> np.ndarray:
    e = np.array(g.sorted_edges(), dtype=np.int64).reshape(-1, 2)
    return np.concatenate([e, e[:, ::-1]]).T


def subgraph_sum_matrix(table: SubGraphTable) -> sp.csr_matrix:
    """``S[v, u] = 1`` for ``u`` in the BFS sub-graph of ``v``, ``u != v``."""
    n = len(table)
    return _csr(_subgraph_index(table), (n, n))


def adjacency_matrix(g: Graph) -> sp.csr_matrix:
    return _csr(_adjacency_index(g), (g.n, g.n))


def make_plan(g: Graph, beta: int) -> GraphPlan:
    table = bfs_subgraphs(g, beta)
    member = np.zeros((g.n, g.n))
    for v, members in enumerate(table.members):
        member[v, list(members)] = 1.0
    overlap = (member @ member.T).astype(np.int64)
    return GraphPlan(g, table, _adjacency_index(g), _subgraph_index(table), overlap)


def _stack_index(indices, offsets, total):
    cat = np.concatenate([ix + off for ix, off in zip(indices, offsets)], axis=1)
    return _csr(cat, (total, total))


# --- layers ----------------------------------------------------------------

def _val(x, tape):
    return x if isinstance(x, T.Value) else tape.const(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, T.Value):
            return x.tape
    return T.Tape()


def mlp(x, w1, b1, w2, b2):
    """linear -> max(0, .) -> linear."""
    return T.matmul(T.relu(T.matmul(x, w1) + b1), w2) + b2


def init_layer(g: Graph, table: SubGraphTable, mlp_params, gamma=0.0):
    """``h0_v = MLP((1 + gamma) x_v + sum_{u in S(v), u != v} x_u)``.

    ``mlp_params`` is ``(w1, b1, w2, b2)`` as arrays or Values; returns a Value.
    """
    tape = _tape_of(*mlp_params)
    x = g.attributes
    if mlp_params[0].shape[0] != x.shape[1]:
        raise T.ShapeError(f"init_layer: attribute dim {x.shape[1]} != MLP input {mlp_params[0].shape[0]}")
    pre = (1.0 + gamma) * x + subgraph_sum_matrix(table) @ x
    return mlp(tape.const(pre), *[_val(p, tape) for p in mlp_params])


def aggregate(adj, H: T.Value, gamma=0.0) -> T.Value:
    """``(1 + gamma) h_v + sum_{u in N(v)} h_u``."""
    if adj.shape[0] != H.rows:
        raise T.ShapeError(f"la_layer: {adj.shape[0]} nodes but H has {H.rows} rows")
    agg = T.spmm(adj, H)
    self_term = H if gamma == 0.0 else T.scale(H, 1.0 + gamma)
    return self_term + agg


def la_layer(g, H, mlp_params, gamma=0.0) -> T.Value:
    tape = _tape_of(H, *mlp_params)
    adj = adjacency_matrix(g) if isinstance(g, Graph) else g
    H = _val(H, tape)
    return mlp(aggregate(adj, H, gamma), *[_val(p, tape) for p in mlp_params])


def _unit_projection(w: T.Value) -> T.Value:
    if not np.any(w.data):
        raise DegenerateProjectionError("pooling projection vector has zero norm")
    return T.transpose(T.row_l2_normalize(T.transpose(w)))


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Positions of the ``k`` largest scores, lower index first on ties, sorted ascending."""
    n = len(scores)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    order = np.lexsort((np.arange(n), -scores))
    return np.sort(order[:k])


def topk_select(Z, w, k):
    """Select the ``k`` best-scoring rows of ``Z`` and gate them by ``sigmoid(score)``.

    Returns ``(idx, gated)`` where ``gated`` is a ``k x d`` Value.
    """
    tape = _tape_of(Z, w)
    Z, w = _val(Z, tape), _val(w, tape)
    scores = T.matmul(Z, _unit_projection(w))
    idx = topk_indices(scores.data[:, 0], k)
    gate = T.sigmoid(T.gather_rows(scores, idx))
    return idx, T.mul(T.gather_rows(Z, idx), gate)


def build_coarse_graph(table, idx, epsilon=1) -> set:
    """Edges between positions ``a < b`` of ``idx`` whose sub-graphs share >= epsilon nodes."""
    members = [set(table[i]) for i in idx]
    edges = set()
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            if len(members[a] & members[b]) >= epsilon:
                edges.add((a, b))
    return edges


def _coarse_operator(k, edges):
    """``I + A_coarse`` as a sparse ``k x k`` matrix."""
    rows = list(range(k))
    cols = list(range(k))
    for a, b in edges:
        rows += [a, b]
        cols += [b, a]
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(k, k))


def super_node_features(Zg, coarse_edges, W_g) -> T.Value:
    """``z~_i = W_g z_i + sum_{j ~ i} W_g z_j`` over coarse-graph neighbours."""
    tape = _tape_of(Zg, W_g)
    Zg, W_g = _val(Zg, tape), _val(W_g, tape)
    if W_g.cols != Zg.cols:
        raise T.ShapeError(f"super_node_features: W_g {W_g.shape} vs features {Zg.shape}")
    return T.spmm(_coarse_operator(Zg.rows, coarse_edges), T.matmul(Zg, T.transpose(W_g)))


def readout(Zt, W_r) -> T.Value:
    """``W_r @ mean(z~)`` as a ``1 x d_g`` row."""
    tape = _tape_of(Zt, W_r)
    Zt, W_r = _val(Zt, tape), _val(W_r, tape)
    if Zt.rows < 1:
        raise ValueError("readout needs at least one super node")
    return T.matmul(T.col_mean(Zt), T.transpose(W_r))


# --- batched forward -------------------------------------------------------

@dataclass
class BatchOutput:
    r: T.Value           # B x d_g graph embeddings before the classifier
    probs: T.Value       # B x C class probabilities
    selected: list       # per graph: selected node indices
    coarse_edges: list   # per graph: coarse edge sets over positions in ``selected``


def pool_size(n, ratio):
    return max(1, min(n, math.ceil(ratio * n)))


def _mlp_params(p, prefix):
    return p[f"{prefix}.w1"], p[f"{prefix}.b1"], p[f"{prefix}.w2"], p[f"{prefix}.b2"]


def forward_batch(plans, p: dict, cfg: ModelConfig) -> BatchOutput:
    """Run the model on several graphs at once; ``p`` maps names to Values on one tape."""
    tape = p["cls.W"].tape
    sizes = [pl.graph.n for pl in plans]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    X = np.vstack([pl.graph.attributes for pl in plans])
    N = int(offsets[-1])
    sub = _stack_index([pl.sub_index for pl in plans], offsets, N)
    adj = _stack_index([pl.adj_index for pl in plans], offsets, N)

    H = mlp(tape.const((1.0 + cfg.gamma) * X + sub @ X), *_mlp_params(p, "init"))
    for layer in range(1, cfg.layers + 1):
        H = mlp(aggregate(adj, H, cfg.gamma), *_mlp_params(p, f"la{layer}"))

    scores = T.matmul(H, _unit_projection(p["pool.w"]))
    s = scores.data[:, 0]
    selected, coarse, gidx, blocks, ks = [], [], [], [], []
    pos = 0
    for b, pl in enumerate(plans):
        k = pool_size(sizes[b], cfg.pool_ratio)
        idx = topk_indices(s[offsets[b]:offsets[b + 1]], k)
        ov = pl.overlap[np.ix_(idx, idx)]
        a, c = np.nonzero(np.triu(ov >= cfg.epsilon, k=1))
        selected.append(idx)
        coarse.append(set(zip(a.tolist(), c.tolist())))
        gidx.append(idx + offsets[b])
        diag = np.arange(k)
        blocks.append(np.stack([np.concatenate([diag, a, c]), np.concatenate([diag, c, a])]) + pos)
        ks.append(k)
        pos += k
    gidx = np.concatenate(gidx)
    gate = T.sigmoid(T.gather_rows(scores, gidx))
    Zg = T.mul(T.gather_rows(H, gidx), gate)
    Zt = T.spmm(_csr(np.concatenate(blocks, axis=1), (pos, pos)), T.matmul(Zg, T.transpose(p["super.W"])))

    rows = np.repeat(np.arange(len(plans)), ks)
    pool = sp.csr_matrix((np.repeat(1.0 / np.array(ks), ks), (rows, np.arange(len(rows)))),
                         shape=(len(plans), len(rows)))
    r = T.matmul(T.spmm(pool, Zt), T.transpose(p["readout.W"]))
    logits = T.matmul(r, T.transpose(p["cls.W"])) + p["cls.b"]
    return BatchOutput(r, T.row_softmax(logits), selected, coarse)


@dataclass
class GraphEmbedding:
    r: np.ndarray
    p: np.ndarray

    @property
    def r_normalized(self):
        return self.r / max(np.linalg.norm(self.r), 1e-12)


def forward(g: Graph, params: ModelParams, cfg: ModelConfig | None = None) -> GraphEmbedding:
    """Evaluate one graph with frozen parameters."""
    cfg = cfg or params.config
    tape = T.Tape()
    out = forward_batch([make_plan(g, cfg.beta)], params.on_tape(tape, requires_grad=False), cfg)
    return GraphEmbedding(out.r.data[0].copy(), out.probs.data[0].copy())


def predict(plans, params: ModelParams, batch_size=256) -> np.ndarray:
    """Class probabilities for every plan, ``len(plans) x C``."""
    cfg = params.config
    out = []
    for start in range(0, len(plans), batch_size):
        tape = T.Tape()
        res = forward_batch(plans[start:start + batch_size], params.on_tape(tape, requires_grad=False), cfg)
        out.append(res.probs.data)
    return np.vstack(out) if out else np.zeros((0, cfg.num_classes))
