"""End-to-end training: structure-inference preprocessing, view construction,
RMSprop training of the joint loss, and stratified cross-validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import StratifiedKFold

from . import tensor as T
from .cascades import simulate_cascades
from .graph import Dataset, Graph, add_edges
from .inference import EDGE_THRESHOLD, SolverConfig, TransmissionMatrix, augment_graph, infer_structure
from .losses import ContrastBatch, cross_entropy, sup_gcon_loss, total_loss
from .model import ModelConfig, ModelParams, forward_batch, init_params, make_plan, predict

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    dataset: str = "data/MUTAG"
    name: str = "MUTAG"
    seed: int = 0
    beta: int = 5
    xi: int = 1
    q: int = 0              # cascades per graph; 0 means 20 * n
    T: float = 10.0
    tau: float = 0.07
    lam: float = 0.01
    layers: int = 5
    hidden: int = 16
    pool_ratio: float = 0.5
    epsilon: int = 1
    gamma: float = 0.0
    lr: float = 0.005
    lr_decay: float = 0.97  # per-epoch multiplicative factor
    weight_decay: float = 0.001
    alpha: float = 0.9
    epochs: int = 100
    batch_size: int = 16
    folds: int = 10
    view_mode: str = "stochastic"
    cache_dir: str = ".supcosine-cache"

    def __post_init__(self):
        checks = [
            (self.beta >= 1, "beta must be >= 1"),
            (self.xi >= 0, "xi must be >= 0"),
            (self.q >= 0, "q must be >= 0"),
            (self.T >= 0, "T must be >= 0"),
            (self.tau > 0, "tau must be > 0"),
            (self.lam >= 0, "lam must be >= 0"),
            (self.layers >= 0, "layers must be >= 0"),
            (self.hidden >= 1, "hidden must be >= 1"),
            (0 < self.pool_ratio <= 1, "pool_ratio must lie in (0, 1]"),
            (self.epsilon >= 1, "epsilon must be >= 1"),
            (self.lr > 0, "lr must be > 0"),
            (0 < self.lr_decay <= 1, "lr_decay must lie in (0, 1]"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (0 <= self.alpha < 1, "alpha must lie in [0, 1)"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.folds >= 2, "folds must be >= 2"),
            (self.view_mode in ("stochastic", "deterministic"), "view_mode must be stochastic or deterministic"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def model_config(self, in_dim, num_classes) -> ModelConfig:
        return ModelConfig(in_dim, num_classes, beta=self.beta, layers=self.layers, hidden=self.hidden,
                           super_dim=self.hidden, graph_dim=self.hidden, pool_ratio=self.pool_ratio,
                           epsilon=self.epsilon, gamma=self.gamma)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown field {key!r}")
            typ = types[key]
            try:
                kw[key] = int(value) if typ == "int" else float(value) if typ == "float" else value
            except ValueError:
                raise ValueError(f"config line {lineno}: bad {typ} value {value!r} for {key}") from None
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# --- preprocessing ---------------------------------------------------------

@dataclass
class Preprocessed:
    original: Dataset
    matrices: list
    augmented: Dataset


def _dataset_digest(ds: Dataset) -> str:
    h = hashlib.sha256()
    for g in ds.graphs:
        h.update(repr((g.n, g.sorted_edges(), g.label)).encode())
        h.update(np.ascontiguousarray(g.attributes).tobytes())
    return h.hexdigest()[:16]


def _cache_path(ds: Dataset, cfg: RunConfig):
    key = f"{ds.name}-s{cfg.seed}-q{cfg.q}-T{cfg.T:g}-{_dataset_digest(ds)}.npz"
    return os.path.join(cfg.cache_dir, key)


def infer_graph(g: Graph, q: int, T_window: float, seed: int, solver=None) -> TransmissionMatrix:
    """Simulate cascades on ``g`` and fit its transmission matrix."""
    q = q or 20 * g.n
    cs = simulate_cascades(g, q, T_window, seed)
    M, report = infer_structure(cs, solver)
    if report.warning:
        log.warning("graph with %d nodes: %s", g.n, report.warning)
    return M


def preprocess(ds: Dataset, cfg: RunConfig, use_cache=True) -> Preprocessed:
    """Per graph: cascades -> transmission matrix -> top-``xi`` augmentation.

    Matrices are cached under ``cfg.cache_dir`` keyed by dataset, seed, q and T.
    """
    path = _cache_path(ds, cfg)
    matrices = None
    if use_cache and cfg.cache_dir and os.path.exists(path):
        with np.load(path) as z:
            matrices = [TransmissionMatrix(z[f"r{i}"], z[f"s{i}"]) for i in range(len(ds))]
        log.info("loaded %d cached transmission matrices from %s", len(matrices), path)
    if matrices is None:
        matrices = []
        for gi, g in enumerate(ds.graphs):
            try:
                matrices.append(infer_graph(g, cfg.q, cfg.T, derive_seed(cfg.seed, gi)))
            except (ValueError, FloatingPointError) as exc:
                log.warning("graph %d: inference failed (%s); keeping original edges", gi, exc)
                matrices.append(TransmissionMatrix.zeros(g.n))
        if use_cache and cfg.cache_dir:
            os.makedirs(cfg.cache_dir, exist_ok=True)
            arrays = {}
            for i, M in enumerate(matrices):
                arrays[f"r{i}"] = M.rates
                arrays[f"s{i}"] = M.support
            tmp = path + ".tmp"
            with open(tmp, "wb") as fh:
                np.savez(fh, **arrays)
            os.replace(tmp, path)
    augmented = ds.replace_graphs([augment_graph(g, M, cfg.xi) for g, M in zip(ds.graphs, matrices)])
    return Preprocessed(ds, matrices, augmented)


def make_views(graph: Graph, M: TransmissionMatrix, xi: int, rng: np.random.Generator, mode="stochastic"):
    """Deterministic top-``xi`` view and a view drawing ``xi`` pairs with probability
    proportional to their symmetrized rate."""
    positive = augment_graph(graph, M, xi)
    if mode == "deterministic" or xi == 0:
        return positive, positive
    w = M.symmetrized()
    iu, ju = np.triu_indices(graph.n, k=1)
    keep = [(i, j) for i, j in zip(iu.tolist(), ju.tolist())
            if w[i, j] > EDGE_THRESHOLD and (i, j) not in graph.edges]
    if not keep:
        return graph, graph
    weights = np.array([w[i, j] for i, j in keep])
    take = rng.choice(len(keep), size=min(xi, len(keep)), replace=False, p=weights / weights.sum())
    negative = add_edges(graph, [keep[t] for t in sorted(take)])
    return positive, negative


# --- optimisation ----------------------------------------------------------

@dataclass
class OptimizerState:
    sq: dict = field(default_factory=dict)
    step: int = 0


RMS_EPS = 1e-8


def rmsprop_step(param: np.ndarray, grad: np.ndarray, sq: np.ndarray, lr, alpha=0.9, weight_decay=0.0):
    """One RMSprop update with decoupled weight decay; returns ``(param, sq)``."""
    if param.shape != grad.shape or param.shape != sq.shape:
        raise ValueError(f"rmsprop_step: shapes {param.shape}, {grad.shape}, {sq.shape} differ")
    sq = alpha * sq + (1.0 - alpha) * grad * grad
    param = param - lr * grad / np.sqrt(sq + RMS_EPS) - lr * weight_decay * param
    return param, sq


def apply_rmsprop(params: ModelParams, grads: dict, state: OptimizerState, cfg: RunConfig, lr=None):
    lr = cfg.lr if lr is None else lr
    for name, value in params.arrays.items():
        sq = state.sq.get(name)
        if sq is None:
            sq = np.zeros_like(value)
        params.arrays[name], state.sq[name] = rmsprop_step(
            value, grads[name], sq, lr, cfg.alpha, cfg.weight_decay)
    state.step += 1


# --- training --------------------------------------------------------------

@dataclass
class EpochTrace:
    epoch: int
    gc: float
    sc: float
    total: float


@dataclass
class TrainSplit:
    """Training inputs: the deterministic and stochastic view of each graph plus labels."""

    positive: list
    negative: list
    labels: np.ndarray
    num_classes: int
    in_dim: int


def build_split(pre: Preprocessed, indices, cfg: RunConfig) -> TrainSplit:
    pos, neg = [], []
    for gi in indices:
        rng = np.random.default_rng(derive_seed(cfg.seed, 1, gi))
        a, b = make_views(pre.original[gi], pre.matrices[gi], cfg.xi, rng, cfg.view_mode)
        pos.append(make_plan(a, cfg.beta))
        neg.append(make_plan(b, cfg.beta))
    labels = np.array([pre.original[gi].label for gi in indices], dtype=np.int64)
    return TrainSplit(pos, neg, labels, pre.original.num_classes, pre.original.graphs[0].d)


def batch_loss(params: dict, pos_plans, neg_plans, labels, mcfg: ModelConfig, tau, lam):
    """Joint loss for one batch; returns ``(total, gc, sc)`` Values."""
    B = len(pos_plans)
    out = forward_batch(list(pos_plans) + list(neg_plans), params, mcfg)
    probs = T.gather_rows(out.probs, np.arange(B))
    gc = cross_entropy(probs, labels)
    r1 = T.gather_rows(out.r, np.arange(B))
    r2 = T.gather_rows(out.r, np.arange(B, 2 * B))
    sc = sup_gcon_loss(ContrastBatch.from_views(r1, r2, labels), tau)
    return total_loss(gc, sc, lam), gc, sc


def train(split: TrainSplit, cfg: RunConfig, seed=None, params: ModelParams | None = None):
    """RMSprop on ``L_gc + lam * L_sc``; returns ``(params, traces)``."""
    seed = cfg.seed if seed is None else seed
    mcfg = cfg.model_config(split.in_dim, split.num_classes)
    params = params.copy() if params is not None else init_params(mcfg, derive_seed(seed, 2))
    state = OptimizerState()
    rng = np.random.default_rng(derive_seed(seed, 3))
    m = len(split.labels)
    traces = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        sums = np.zeros(3)
        lr = cfg.lr * cfg.lr_decay ** epoch
        for b, start in enumerate(range(0, m, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            tape = T.Tape()
            p = params.on_tape(tape)
            try:
                loss, gc, sc = batch_loss(p, [split.positive[i] for i in idx], [split.negative[i] for i in idx],
                                          split.labels[idx], mcfg, cfg.tau, cfg.lam)
                grads = tape.backward(loss)
            except (FloatingPointError, T.DomainError, ValueError) as exc:
                raise TrainingError(f"degenerate loss at epoch {epoch} batch {b}: {exc}") from exc
            apply_rmsprop(params, {k: grads[v.id] for k, v in p.items()}, state, cfg, lr)
            sums += len(idx) * np.array([gc.item(), sc.item(), loss.item()])
        traces.append(EpochTrace(epoch, *(sums / max(m, 1))))
    return params, traces


def accuracy(plans, labels, params: ModelParams) -> float:
    if not plans:
        return 0.0
    pred = np.argmax(predict(plans, params), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


# --- cross-validation --------------------------------------------------------

@dataclass
class MetricsReport:
    fold_accuracies: list
    mean: float
    std: float
    traces: list = field(default_factory=list)   # per fold: list of EpochTrace
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        """Deterministic JSON document (wall-clock is kept out so reruns compare byte-equal)."""
        doc = {
            "config": self.config,
            "fold_accuracies": [round(a, 12) for a in self.fold_accuracies],
            "mean_accuracy": round(self.mean, 12),
            "std_accuracy": round(self.std, 12),
            "final_losses": [
                {"gc": round(t[-1].gc, 12), "sc": round(t[-1].sc, 12), "total": round(t[-1].total, 12)}
                for t in self.traces if t
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def trace_table(self) -> str:
        lines = ["fold,epoch,gc,sc,total"]
        for fold, trace in enumerate(self.traces):
            for t in trace:
                lines.append(f"{fold},{t.epoch},{t.gc:.9g},{t.sc:.9g},{t.total:.9g}")
        return "\n".join(lines) + "\n"


def stratified_folds(labels, folds, seed):
    labels = np.asarray(labels)
    _, counts = np.unique(labels, return_counts=True)
    if counts.min() < folds:
        raise ValueError(f"smallest class has {counts.min()} graphs, fewer than {folds} folds; use fewer folds")
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=derive_seed(seed, 4) % (2 ** 32))
    return [(np.sort(tr), np.sort(te)) for tr, te in skf.split(np.zeros(len(labels)), labels)]


def cross_validate(pre: Preprocessed, cfg: RunConfig, trainer=train) -> MetricsReport:
    """Stratified k-fold CV; test accuracy uses the deterministic view of each test graph."""
    start = time.perf_counter()
    labels = pre.original.labels
    accs, traces = [], []
    for fold, (tr, te) in enumerate(stratified_folds(labels, cfg.folds, cfg.seed)):
        split = build_split(pre, tr, cfg)
        params, trace = trainer(split, cfg, seed=derive_seed(cfg.seed, 5, fold))
        test_plans = [make_plan(pre.augmented[gi], cfg.beta) for gi in te]
        acc = accuracy(test_plans, labels[te], params)
        log.info("fold %d: test accuracy %.4f", fold, acc)
        accs.append(acc)
        traces.append(trace)
    accs_arr = np.array(accs)
    return MetricsReport(accs, float(accs_arr.mean()), float(accs_arr.std()), traces,
                         time.perf_counter() - start, dataclasses.asdict(cfg))


def run_all(ds: Dataset, cfg: RunConfig, out_dir=None) -> MetricsReport:
    pre = preprocess(ds, cfg)
    report = cross_validate(pre, cfg)
    if out_dir:
        write_report(report, out_dir)
    return report


def write_report(report: MetricsReport, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out_dir, "loss_trace.csv"), "w") as fh:
        fh.write(report.trace_table())
    with open(os.path.join(out_dir, "timing.txt"), "w") as fh:
        fh.write(f"wall_clock_seconds {report.wall_clock:.3f}\n")
