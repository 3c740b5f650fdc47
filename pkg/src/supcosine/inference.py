"""Maximum-likelihood transmission rates from cascades, and edge selection.

The cascade likelihood uses the exponential transmission model: the hazard of
``i -> j`` is ``M[i, j]`` and the survival over a delay ``dt`` is
``exp(-M[i, j] * dt)``.  Per cascade the negative log-likelihood is

    sum_{j activated, j != root} [ sum_{i: t_i < t_j} M_ij (t_j - t_i) - log sum_{i: t_i < t_j} M_ij ]
  + sum_{l not activated} sum_{j activated} M_jl (T - t_j)

which is convex in ``M``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cascades import CascadeSet
from .graph import Graph, add_edges

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-9
EDGE_THRESHOLD = 1e-6


class ZeroHazardError(ValueError):
    """An activated node has no positive incoming rate from earlier nodes."""


@dataclass(frozen=True, eq=False)
class TransmissionMatrix:
    rates: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        rates = np.array(self.rates, dtype=np.float64)
        support = np.array(self.support, dtype=bool)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1] or support.shape != rates.shape:
            raise ValueError("rates and support must be matching square matrices")
        if np.any(np.diag(support)):
            raise ValueError("support may not contain the diagonal")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("rates must be finite and non-negative")
        if np.any(rates[~support] != 0):
            raise ValueError("rates outside the support must be zero")
        rates.setflags(write=False)
        support.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "support", support)

    @property
    def n(self):
        return self.rates.shape[0]

    @classmethod
    def full(cls, rates):
        """All off-diagonal pairs in the support; ``rates`` diagonal is ignored."""
        rates = np.array(rates, dtype=np.float64)
        np.fill_diagonal(rates, 0.0)
        support = ~np.eye(rates.shape[0], dtype=bool)
        return cls(rates, support)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)), np.zeros((n, n), dtype=bool))

    def symmetrized(self) -> np.ndarray:
        return (self.rates + self.rates.T) / 2.0


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iters: int = 2000
    init_rate: float = 0.1


@dataclass
class SolverReport:
    iterations: int
    nll: float
    grad_norm: float
    trace: list = field(default_factory=list)
    converged: bool = False
    warning: str | None = None


class _Compiled:
    """Cascade statistics that the likelihood needs, independent of ``M``.

    ``linear`` collects every ``M_ij * dt`` coefficient summed over cascades;
    each row of ``parents`` marks the potential transmitters of one activation
    event whose target node is ``targets[row]``.
    """

    def __init__(self, cs: CascadeSet):
        n, T = cs.n, cs.window
        times = cs.time_matrix()
        self.n = n
        self.linear = np.zeros((n, n))
        self.support = np.zeros((n, n), dtype=bool)
        parents, targets, owners = [], [], []
        for c, t in enumerate(times):
            act = np.isfinite(t) & (t <= T)
            ti = t[:, None]
            tj = t[None, :]
            earlier = act[:, None] & act[None, :] & (ti < tj)
            delay = np.where(earlier, tj - np.where(act, t, 0.0)[:, None], 0.0)
            survive = act[:, None] & ~act[None, :]
            delay = delay + np.where(survive, T - np.where(act, t, 0.0)[:, None], 0.0)
            self.linear += delay
            self.support |= earlier | survive
            for j in np.flatnonzero(act):
                mask = earlier[:, j]
                if mask.any():
                    parents.append(mask)
                    targets.append(j)
                    owners.append(c)
        self.parents = np.array(parents, dtype=np.float64).reshape(len(parents), n)
        self.targets = np.array(targets, dtype=np.int64)
        self.owners = np.array(owners, dtype=np.int64)
        np.fill_diagonal(self.support, False)

    def hazards(self, rates):
        return (self.parents * rates[:, self.targets].T).sum(axis=1)

    def check(self, h):
        bad = np.flatnonzero(h <= 0)
        if bad.size:
            k = bad[0]
            raise ZeroHazardError(
                f"zero incoming hazard at node {self.targets[k]} in cascade {self.owners[k]}"
            )

    def nll(self, rates):
        h = self.hazards(rates)
        self.check(h)
        return float((self.linear * rates).sum() - np.log(h).sum())

    def grad(self, rates):
        h = self.hazards(rates)
        self.check(h)
        weighted = self.parents / h[:, None]
        g = self.linear.copy()
        inv = np.zeros((self.n, self.n))
        np.add.at(inv.T, self.targets, weighted)
        g -= inv
        return g


def _rates(M):
    return M.rates if isinstance(M, TransmissionMatrix) else np.asarray(M, dtype=np.float64)


def cascade_nll(cs: CascadeSet, M) -> float:
    """Negative log-likelihood of all cascades in ``cs`` under rates ``M``."""
    return _Compiled(cs).nll(_rates(M))


def cascade_nll_grad(cs: CascadeSet, M) -> np.ndarray:
    """Gradient of :func:`cascade_nll`; zero outside the support of ``M``."""
    comp = _Compiled(cs)
    g = comp.grad(_rates(M))
    mask = M.support if isinstance(M, TransmissionMatrix) else comp.support
    return np.where(mask, g, 0.0)


def infer_structure(cs: CascadeSet, cfg: SolverConfig | None = None):
    """Projected gradient descent on the cascade NLL over ``M >= RATE_FLOOR``.

    Trial steps use the Barzilai-Borwein length; a step is halved until the
    NLL does not increase, so the trace is monotone.  Stationarity is measured
    with the projected gradient ``M - proj(M - grad)``.
    """
    cfg = cfg or SolverConfig()
    comp = _Compiled(cs)
    n = comp.n
    support = comp.support
    if len(comp.targets) == 0:
        report = SolverReport(0, 0.0, 0.0, [], True, "no activated transitions; returning zero rates")
        log.warning(report.warning)
        return TransmissionMatrix.zeros(n), report

    x = np.where(support, cfg.init_rate, 0.0)
    f = comp.nll(x)
    g = np.where(support, comp.grad(x), 0.0)
    trace = [f]

    def proj_grad_norm(x, g):
        return float(np.abs(x - np.where(support, np.maximum(x - g, RATE_FLOOR), 0.0)).max())

    step = 1.0 / max(np.abs(g).max(), 1e-12) * cfg.init_rate
    pgn = proj_grad_norm(x, g)
    it = 0
    converged = pgn < cfg.tol
    while not converged and it < cfg.max_iters:
        it += 1
        eta = step
        while True:
            x_new = np.where(support, np.maximum(x - eta * g, RATE_FLOOR), 0.0)
            f_new = comp.nll(x_new)
            g_new = np.where(support, comp.grad(x_new), 0.0)
            if f_new <= f:
                break
            # convexity: <grad(x_new), x_new - x> <= 0 certifies f(x_new) <= f(x);
            # lets the solver move when the decrease is below round-off
            if float((g_new * (x_new - x)).sum()) <= 0.0:
                f_new = f
                break
            eta *= 0.5
            if eta < 1e-30:
                x_new, f_new, g_new = x, f, g
                break
        s = x_new - x
        y = g_new - g
        sy = float((s * y).sum())
        step = float((s * s).sum()) / sy if sy > 0 else eta * 2.0
        stalled = x_new is x or not np.any(s)
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        pgn = proj_grad_norm(x, g)
        converged = pgn < cfg.tol
        if stalled:
            break
    report = SolverReport(it, f, pgn, trace, converged)
    return TransmissionMatrix(x, support), report


def select_edges(M: TransmissionMatrix, g: Graph, xi: int) -> list:
    """Top-``xi`` non-edges ranked by symmetrized rate (ties: lexicographic)."""
    if xi < 0:
        raise ValueError(f"xi must be >= 0, got {xi}")
    w = M.symmetrized()
    iu, ju = np.triu_indices(M.n, k=1)
    cand = [
        (-w[i, j], int(i), int(j))
        for i, j in zip(iu, ju)
        if w[i, j] > EDGE_THRESHOLD and (int(i), int(j)) not in g.edges
    ]
    cand.sort()
    return [(i, j) for _, i, j in cand[:xi]]


def augment_graph(g: Graph, M: TransmissionMatrix, xi: int) -> Graph:
    return add_edges(g, select_edges(M, g, xi))


def format_triples(M: TransmissionMatrix) -> str:
    """``i j rate`` lines for every support entry, 9 significant digits."""
    lines = [f"{i} {j} {M.rates[i, j]:.9g}" for i, j in zip(*np.nonzero(M.support))]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_triples(text: str, n: int) -> TransmissionMatrix:
    rates = np.zeros((n, n))
    support = np.zeros((n, n), dtype=bool)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            i, j, r = line.split()
            i, j = int(i), int(j)
            rates[i, j] = float(r)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"triple line {lineno}: {exc}") from None
        support[i, j] = True
    return TransmissionMatrix(rates, support)
