"""Exit-set explorations from the boundary and the harmonic-mean observable."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import kjump_bfs
from .gff import GaussianSampler, VectorField
from .harmonic import hitting_probs
from .lattice import SiteGraph, ball_offsets, build_box, grid_positions
from .rng import replica_rng


@dataclass
class ExitSet:
    """Sites reached from the boundary by k-jump paths through ``|phi| <= R``.

    ``explored`` includes absorbed sites (``|phi| > R``) that were reached but
    do not propagate; ``absorbed`` marks those.
    """

    graph: SiteGraph
    explored: np.ndarray
    absorbed: np.ndarray
    values: np.ndarray
    R: float
    k: int
    stopped: bool
    metric: str = "l1"

    @property
    def size(self) -> int:
        return int(self.explored.sum())

    def box_half_width(self) -> int:
        return (self.graph.grid.shape[0] - 1) // 2

    def reaches(self, eps: float) -> bool:
        """Does the set meet Lambda_{floor((1-eps) n)}?"""
        n = self.box_half_width()
        r = int(np.floor((1 - eps) * n))
        sup = np.abs(self.graph.coords).max(axis=1)
        return bool(np.any(self.explored & (sup <= r)))

    def field_values(self) -> np.ndarray:
        """Per-site values with zeros off the explored set."""
        out = np.zeros((self.graph.n_sites, self.values.shape[1]))
        out[self.explored] = self.values
        return out

    def to_json(self) -> str:
        """Run-length encoding of the explored mask (grid order) plus the value list."""
        m = self.graph.to_grid(self.explored.astype(np.int8), fill=0).ravel()
        change = np.flatnonzero(np.diff(m)) + 1
        bounds = np.r_[0, change, len(m)]
        runs = np.diff(bounds).tolist()
        if m[0] == 1:
            runs = [0] + runs
        order = self.graph.to_grid(np.arange(self.graph.n_sites), fill=-1).ravel()
        sel = order[(m == 1)]
        vals = np.zeros((self.graph.n_sites, self.values.shape[1]))
        vals[self.explored] = self.values
        return json.dumps({"shape": list(self.graph.grid.shape), "R": self.R, "k": self.k,
                           "stopped": self.stopped, "metric": self.metric, "runs": runs,
                           "values": vals[sel].tolist()})

    @staticmethod
    def mask_from_json(text: str, graph: SiteGraph):
        d = json.loads(text)
        bits = []
        v = 0
        for r in d["runs"]:
            bits.extend([v] * r)
            v ^= 1
        m = graph.from_grid(np.array(bits, dtype=bool).reshape(d["shape"]))
        order = graph.to_grid(np.arange(graph.n_sites), fill=-1).ravel()
        sel = order[np.array(bits, dtype=bool)]
        vals = np.zeros((graph.n_sites, len(d["values"][0]) if d["values"] else 1))
        vals[sel] = np.array(d["values"]).reshape(len(sel), -1)
        return m, vals


def explore(field: VectorField, R: float, k: int, stopped: bool = False, metric: str = "l1",
            check_boundary: bool = True) -> ExitSet:
    """Exit set A_{R,k} (or the stopped variant confined to Lambda_n minus Lambda_{n/2})."""
    if k < 1:
        raise ValueError("k must be >= 1")
    g = field.graph
    if check_boundary and np.any(field.values[g.boundary] != 0):
        raise ValueError("field must vanish on the boundary")
    norm2 = np.sum(field.values ** 2, axis=1)
    prop = norm2 <= R * R
    visit = np.ones(g.n_sites, dtype=bool)
    if stopped:
        n = (g.grid.shape[0] - 1) // 2
        visit = np.abs(g.coords).max(axis=1) > n // 2
        prop = prop & visit
    gi, gj = grid_positions(g)
    starts = np.flatnonzero(g.boundary)
    seen = kjump_bfs(g.grid, gi, gj, g.period is not None, ball_offsets(k, metric), starts, True,
                     visit, prop)
    absorbed = seen & ~prop & ~g.boundary
    return ExitSet(g, seen, absorbed, field.values[seen].copy(), float(R), int(k), bool(stopped),
                   metric)


@dataclass
class Estimate:
    estimate: float
    stderr: float
    replicas: int
    samples: Optional[np.ndarray] = None


def _bernoulli(x: np.ndarray) -> Estimate:
    p = float(x.mean())
    return Estimate(p, float(np.sqrt(max(p * (1 - p), 0.0) / len(x))), len(x), x)


def _mean(x: np.ndarray) -> Estimate:
    s = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")
    return Estimate(float(x.mean()), s, len(x), x)


def reach_indicators(n: int, N: int, R: float, k: int, eps: float, replicas, seed: int,
                     metric: str = "l1", stopped: bool = False) -> np.ndarray:
    """Indicators of the reach event for the given replica indices."""
    g = build_box(n)
    s = GaussianSampler(g)
    out = np.zeros(len(replicas), dtype=bool)
    for t, r in enumerate(replicas):
        f = VectorField(g, s.sample(N, replica_rng(seed, r)))
        out[t] = explore(f, R, k, stopped, metric, check_boundary=False).reaches(eps)
    return out


def reach_probability(n: int, N: int, R: float, k: int, eps: float, replicas: int, seed: int,
                      metric: str = "l1") -> Estimate:
    """Monte Carlo estimate of P(A_{R,k} meets Lambda_{(1-eps)n}) on Lambda_n."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    return _bernoulli(reach_indicators(n, N, R, k, eps, range(replicas), seed, metric))


def harmonic_mean_at_root(ex: ExitSet) -> np.ndarray:
    """phi_A(0): the average of explored values under the hitting law from the origin."""
    g = ex.graph
    tgt = ex.explored | g.boundary
    h = hitting_probs(g, tgt, (0, 0))
    vals = ex.field_values()
    out = np.zeros(vals.shape[1])
    for s, p in h.items():
        out += p * vals[s]
    return out


def phiA_samples(n: int, N: int, R: float, k: int, replicas, seed: int, metric: str = "l1"):
    """Squared norms of phi_A(0) for the stopped exploration, and max explored norm."""
    g = build_box(n)
    s = GaussianSampler(g)
    sq = np.zeros(len(replicas))
    mx = np.zeros(len(replicas))
    for t, r in enumerate(replicas):
        f = VectorField(g, s.sample(N, replica_rng(seed, r)))
        ex = explore(f, R, k, True, metric, check_boundary=False)
        v = harmonic_mean_at_root(ex)
        sq[t] = float(v @ v)
        mx[t] = float(np.sqrt((ex.values ** 2).sum(axis=1).max()))
    return sq, mx


def phiA_variance(n: int, N: int, R: float, k: int, replicas: int, seed: int,
                  metric: str = "l1") -> Estimate:
    """Monte Carlo estimate of E|phi_A(0)|^2 for the stopped exit set."""
    sq, _ = phiA_samples(n, N, R, k, range(replicas), seed, metric)
    return _mean(sq)
