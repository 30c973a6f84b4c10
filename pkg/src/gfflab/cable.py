"""Cable-graph layer: sign clusters of the metric-graph extension and the equator dual set.

Conditionally on the vertex values, the field on a unit edge with endpoint
values a and b is a Brownian bridge; it avoids zero with probability
``1 - exp(-2ab)`` when ``ab > 0``.  An edge is *open* when that happens.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from ._kernels import edge_labels
from .lattice import SiteGraph, build_box, build_torus
from .loopsoup import LoopSoup, crossed_edges, local_time
from .rng import make_rng


@dataclass
class EdgeRefinement:
    """Open/closed bit per edge for the sign clusters of one field component."""

    graph: SiteGraph
    open: np.ndarray
    values: np.ndarray
    component: int = 0
    seed: Optional[int] = None
    _labels: Optional[np.ndarray] = field(default=None, repr=False)

    def labels(self) -> np.ndarray:
        """Cluster id per site (open-edge connectivity); -1 where the value is 0."""
        if self._labels is None:
            self._labels = edge_labels(self.graph.n_sites, self.graph.edges, self.open,
                                       self.values != 0)
        return self._labels

    def cluster_sizes(self) -> np.ndarray:
        lab = self.labels()
        return np.bincount(lab[lab >= 0])


def open_probability(a, b, conductance=1.0):
    """P(bridge from a to b over an edge of the given conductance avoids 0)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = a * b
    return np.where(ab > 0, -np.expm1(-2.0 * conductance * np.where(ab > 0, ab, 0.0)), 0.0)


def refine_signs(graph: SiteGraph, values, seed=None, conductance=1.0,
                 component: int = 0) -> EdgeRefinement:
    """Sample the open edges of the cable extension of a scalar vertex field."""
    rng = make_rng(seed)
    v = np.asarray(values, dtype=float)
    e = graph.edges
    p = open_probability(v[e[:, 0]], v[e[:, 1]], conductance)
    u = rng.random(len(e))
    sd = seed if isinstance(seed, (int, np.integer)) else None
    return EdgeRefinement(graph, u < p, v, component, sd)


def cable_on_extension(theta, beta: float, seed=None, component: int = 0,
                       graph: Optional[SiteGraph] = None) -> EdgeRefinement:
    """Refinement of the vertex field sqrt(beta) * theta, one component."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    g = graph if graph is not None else theta.graph
    th = theta.theta if hasattr(theta, "theta") else np.asarray(theta)
    return refine_signs(g, np.sqrt(beta) * th[:, component], seed, component=component)


def same_sign_connected(ref: EdgeRefinement, x, y) -> bool:
    g = ref.graph
    ix, iy = g.index(x), g.index(y)
    lab = ref.labels()
    return bool(lab[ix] >= 0 and lab[ix] == lab[iy])


def connected_pairs(ref: EdgeRefinement, pairs: np.ndarray) -> np.ndarray:
    lab = ref.labels()
    a, b = lab[pairs[:, 0]], lab[pairs[:, 1]]
    return (a >= 0) & (a == b)


# ---------------------------------------------------------------------------
# bridge oracle


def discrete_bridge_avoidance(a: float, b: float, steps: int, h: Optional[float] = None,
                              top: float = 8.0) -> float:
    """P(a Brownian bridge a -> b on [0, 1] stays positive at ``steps`` equally spaced times).

    Deterministic transfer-operator computation on a midpoint grid of (0, top)
    with FFT convolutions.
    """
    if a <= 0 or b <= 0:
        return 0.0
    dt = 1.0 / steps
    if h is None:
        h = min(np.sqrt(dt) / 12, 0.002)
    x = np.arange(h / 2, top, h)
    nx = len(x)
    off = np.arange(-nx + 1, nx) * h
    ker = np.exp(-off ** 2 / (2 * dt)) / np.sqrt(2 * np.pi * dt) * h
    nf = next_fast_len(3 * nx)
    K = rfft(ker, nf)
    f = np.exp(-(x - a) ** 2 / (2 * dt)) / np.sqrt(2 * np.pi * dt)
    for _ in range(steps - 2):
        f = irfft(rfft(f, nf) * K, nf)[nx - 1:2 * nx - 1]
    last = np.exp(-(b - x) ** 2 / (2 * dt)) / np.sqrt(2 * np.pi * dt)
    num = np.sum(f * last) * h
    den = np.exp(-(b - a) ** 2 / 2) / np.sqrt(2 * np.pi)
    return float(num / den)


def bridge_oracle(a: float, b: float, finest: int = 4096) -> dict:
    """Discretely monitored avoidance at finest/4, finest/2, finest steps and its
    extrapolation in powers sqrt(dt), dt to continuous monitoring."""
    levels = [finest // 4, finest // 2, finest]
    vals = [discrete_bridge_avoidance(a, b, m) for m in levels]
    A = np.array([[1.0, np.sqrt(1.0 / m), 1.0 / m] for m in levels])
    ext = float(np.linalg.solve(A, vals)[0])
    return {"levels": levels, "values": vals, "extrapolated": ext}


def bridge_monte_carlo(a: float, b: float, steps: int, samples: int, seed=None) -> float:
    """Fraction of simulated discretised bridges staying positive."""
    rng = make_rng(seed)
    t = np.arange(1, steps) / steps
    ok = 0
    chunk = max(1, 2_000_000 // steps)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        w = np.cumsum(rng.standard_normal((m, steps)) / np.sqrt(steps), axis=1)
        br = w[:, :-1] - t * w[:, -1:]
        path = a + (b - a) * t + br
        ok += int(np.sum(path.min(axis=1) > 0))
        done += m
    return ok / samples


# ---------------------------------------------------------------------------
# loop-soup route


def soup_open_edges(soup: LoopSoup, label: int = 0, seed=None, L: Optional[np.ndarray] = None):
    """Open edges of the cable occupation cluster {L~ > 0} for one label.

    Edges crossed by a loop jump are open; any other edge with positive local
    times at both ends is open with probability ``1 - exp(-sqrt(L_x L_y))``.
    """
    rng = make_rng(seed)
    g = soup.graph
    if L is None:
        L = local_time(soup).values[:, label]
    e = g.edges
    crossed = crossed_edges(soup, label)
    extra = rng.random(len(e)) < -np.expm1(-np.sqrt(L[e[:, 0]] * L[e[:, 1]]))
    return crossed | extra, L


def soup_sign_refinement(soup: LoopSoup, label: int = 0, seed=None) -> EdgeRefinement:
    """Signed field sqrt(L) times one Rademacher sign per occupation cluster."""
    rng = make_rng(seed)
    op, L = soup_open_edges(soup, label, rng)
    g = soup.graph
    lab = edge_labels(g.n_sites, g.edges, op, L > 0)
    signs = rng.choice([-1.0, 1.0], size=max(int(lab.max()) + 1, 1))
    v = np.where(lab >= 0, np.sqrt(L) * signs[np.maximum(lab, 0)], 0.0)
    ref = EdgeRefinement(g, op, v, label)
    ref._labels = lab
    return ref


# ---------------------------------------------------------------------------
# equator dual


@dataclass
class EquatorDual:
    """Dual edges crossing the closed primal edges of a refinement.

    A dual vertex is a plaquette named by its lower-left corner.
    """

    refinement: EdgeRefinement
    closed: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.closed.sum())

    def dual_edges(self) -> np.ndarray:
        """(n, 2, 2) array of plaquette pairs joined by the dual edges."""
        g = self.refinement.graph
        e = g.edges[self.closed]
        a = g.coords[e[:, 0]]
        d = g.displacement(e[:, 0], e[:, 1])
        horiz = d[:, 0] != 0
        lo = a + np.minimum(d, 0)
        if g.period is not None:
            lo %= g.period
        p = np.where(horiz[:, None], np.stack([lo[:, 0], lo[:, 1] - 1], 1),
                     np.stack([lo[:, 0] - 1, lo[:, 1]], 1))
        if g.period is not None:
            p %= g.period
        return np.stack([p, lo], axis=1)

    def clusters(self) -> dict:
        """Map plaquette -> cluster id for plaquettes touched by dual edges."""
        de = self.dual_edges()
        if len(de) == 0:
            return {}
        keys = {}
        pts = de.reshape(-1, 2)
        for p in map(tuple, pts):
            keys.setdefault(p, len(keys))
        idx = np.array([keys[tuple(p)] for p in pts]).reshape(-1, 2)
        lab = edge_labels(len(keys), idx, np.ones(len(idx), dtype=bool), np.ones(len(keys), bool))
        return {k: int(lab[v]) for k, v in keys.items()}

    def largest_cluster(self) -> int:
        c = self.clusters()
        if not c:
            return 0
        return int(np.bincount(np.array(list(c.values()))).max())


def equator_dual(ref: EdgeRefinement) -> EquatorDual:
    return EquatorDual(ref, ~ref.open)


def quadrant_connection_count(ref: EdgeRefinement, nmax: int) -> int:
    """Number of pairs 1 <= a, b <= nmax with (a, 0) joined to (0, b) by open edges."""
    g = ref.graph
    lab = ref.labels()
    xs = np.array([lab[g.index((a, 0))] for a in range(1, nmax + 1)])
    ys = np.array([lab[g.index((0, b))] for b in range(1, nmax + 1)])
    return int(np.sum((xs[:, None] >= 0) & (xs[:, None] == ys[None, :])))


# ---------------------------------------------------------------------------
# bitmaps

_MAGIC = "gfflab-edges"


def save_bitmap(path, ref: EdgeRefinement, n: int) -> None:
    g = ref.graph
    head = f"{_MAGIC} topology={g.topology} n={n} edges={g.n_edges} component={ref.component} " \
           f"seed={'none' if ref.seed is None else ref.seed}\n"
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write(np.packbits(ref.open.astype(np.uint8)).tobytes())


def load_bitmap(path):
    """Return (graph, open mask, header dict)."""
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii").split()
        raw = fh.read()
    if line[0] != _MAGIC:
        raise ValueError("not an edge bitmap")
    head = dict(p.split("=", 1) for p in line[1:])
    n = int(head["n"])
    g = build_torus(n) if head["topology"] == "torus" else build_box(n, head["topology"])
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: int(head["edges"])].astype(bool)
    return g, bits, head
