"""Continuous-time diffusion cascades with exponential transmission delays."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph

NEVER = math.inf


@dataclass(frozen=True, eq=False)
class Cascade:
    """Activation times for one diffusion; unreached nodes carry ``inf``."""

    times: np.ndarray
    root: int

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64)
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def n(self):
        return len(self.times)

    def activated(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.times))

    def __eq__(self, other):
        return isinstance(other, Cascade) and self.root == other.root and np.array_equal(self.times, other.times)

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class CascadeSet:
    cascades: tuple
    window: float

    def __post_init__(self):
        object.__setattr__(self, "cascades", tuple(self.cascades))
        if not self.cascades:
            raise ValueError("a cascade set needs at least one cascade")
        if len({c.n for c in self.cascades}) != 1:
            raise ValueError("all cascades must cover the same node count")

    @property
    def n(self):
        return self.cascades[0].n

    @property
    def q(self):
        return len(self.cascades)

    def __len__(self):
        return len(self.cascades)

    def __iter__(self):
        return iter(self.cascades)

    def time_matrix(self) -> np.ndarray:
        """``q x n`` array of activation times."""
        return np.vstack([c.times for c in self.cascades])

    def __eq__(self, other):
        return (isinstance(other, CascadeSet) and self.window == other.window
                and self.cascades == other.cascades)

    __hash__ = object.__hash__


def simulate_cascade(g: Graph, T: float, rng: np.random.Generator, rate=1.0) -> Cascade:
    """One cascade: uniform root, i.i.d. Exp(rate) edge delays, shortest delay paths.

    Each undirected edge gets a single delay, drawn in sorted edge order so the
    result only depends on the generator state.
    """
    if T < 0:
        raise ValueError(f"time window must be >= 0, got {T}")
    if g.n < 1:
        raise ValueError("graph has no nodes")
    root = int(rng.integers(g.n))
    edges = g.sorted_edges()
    delays = rng.exponential(1.0 / rate, size=len(edges))
    adj = [[] for _ in range(g.n)]
    for (i, j), w in zip(edges, delays):
        adj[i].append((j, w))
        adj[j].append((i, w))

    times = np.full(g.n, NEVER)
    times[root] = 0.0
    done = np.zeros(g.n, dtype=bool)
    heap = [(0.0, root)]
    while heap:
        t, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj[u]:
            tv = t + w
            if tv <= T and tv < times[v]:
                times[v] = tv
                heapq.heappush(heap, (tv, v))
    return Cascade(times, root)


def simulate_cascades(g: Graph, q: int, T: float, seed: int, rate=1.0) -> CascadeSet:
    """``q`` independent cascades; cascade ``k`` uses a generator seeded by ``(seed, k)``."""
    if q < 1:
        raise ValueError(f"need q >= 1 cascades, got {q}")
    cascades = [
        simulate_cascade(g, T, np.random.default_rng([seed, k]), rate=rate)
        for k in range(q)
    ]
    return CascadeSet(cascades, float(T))


def format_cascades(cs: CascadeSet) -> str:
    """One line per cascade: ``root;node:time,node:time,...`` (finite times only)."""
    lines = []
    for c in cs:
        order = sorted(c.activated(), key=lambda v: (c.times[v], v))
        body = ",".join(f"{v}:{c.times[v]:.6f}" for v in order)
        lines.append(f"{c.root};{body}")
    return "\n".join(lines) + "\n"


def parse_cascades(text: str, n: int, window: float) -> CascadeSet:
    cascades = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            root_s, body = line.split(";", 1)
            times = np.full(n, NEVER)
            for item in filter(None, body.split(",")):
                v, t = item.split(":")
                times[int(v)] = float(t)
            root = int(root_s)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"cascade line {lineno}: {exc}") from None
        cascades.append(Cascade(times, root))
    return CascadeSet(cascades, float(window))
