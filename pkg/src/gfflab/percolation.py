"""k-jump cluster analysis, annulus crossings, coarse-graining, decay fits and G_m graphs."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np
from scipy import stats

from ._kernels import edge_labels, kjump_labels
from .lattice import SiteGraph, Tessellation, ball_offsets, build_box, grid_positions
from .loopsoup import LoopSoup, local_time, massive_thinning
from .rng import make_rng, replica_rng


# ---------------------------------------------------------------------------
# cluster labelling


@dataclass
class ClusterLabeling:
    """Cluster id per site (-1 off the mask) under k-jump adjacency."""

    graph: SiteGraph
    labels: np.ndarray
    k: int
    metric: str

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def sizes(self) -> np.ndarray:
        lab = self.labels
        return np.bincount(lab[lab >= 0], minlength=self.n_clusters)

    def diameters(self, metric: Optional[str] = None) -> np.ndarray:
        """Exact diameter of each cluster in planar coordinates (torus wrap ignored)."""
        metric = metric or self.metric
        lab = self.labels
        sel = lab >= 0
        nc = self.n_clusters
        if nc == 0:
            return np.zeros(0, dtype=np.int64)
        c = self.graph.coords[sel]
        lab = lab[sel]

        def extent(v):
            hi = np.full(nc, np.iinfo(np.int64).min)
            lo = np.full(nc, np.iinfo(np.int64).max)
            np.maximum.at(hi, lab, v)
            np.minimum.at(lo, lab, v)
            return hi - lo

        if metric == "linf":
            return np.maximum(extent(c[:, 0]), extent(c[:, 1]))
        if metric == "l1":
            return np.maximum(extent(c[:, 0] + c[:, 1]), extent(c[:, 0] - c[:, 1]))
        raise ValueError(f"unsupported metric {metric!r}")

    def connected(self, x, y) -> bool:
        a, b = self.labels[self.graph.index(x)], self.labels[self.graph.index(y)]
        return bool(a >= 0 and a == b)

    def site_diameters(self, metric: Optional[str] = None) -> np.ndarray:
        """Diameter of the cluster of each site (-1 off the mask)."""
        d = self.diameters(metric)
        out = np.full(len(self.labels), -1, dtype=np.int64)
        sel = self.labels >= 0
        out[sel] = d[self.labels[sel]]
        return out


def clusters(graph: SiteGraph, mask, k: int = 1, metric: str = "l1") -> ClusterLabeling:
    """Union-find over k-jump adjacency restricted to ``mask``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    gi, gj = grid_positions(graph)
    lab = kjump_labels(graph.grid, gi, gj, graph.period is not None, ball_offsets(k, metric), mask)
    return ClusterLabeling(graph, lab, int(k), metric)


def dilate(graph: SiteGraph, mask, k: int = 1, metric: str = "l1") -> np.ndarray:
    """Sites within distance k of ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    g = graph.to_grid(mask.astype(float), fill=0.0) > 0
    out = g.copy()
    periodic = graph.period is not None
    for dx, dy in ball_offsets(k, metric):
        if periodic:
            out |= np.roll(g, (dx, dy), axis=(0, 1))
        else:
            sh = np.zeros_like(g)
            src = g[max(0, -dx):g.shape[0] - max(0, dx), max(0, -dy):g.shape[1] - max(0, dy)]
            sh[max(0, dx):max(0, dx) + src.shape[0], max(0, dy):max(0, dy) + src.shape[1]] = src
            out |= sh
    return graph.from_grid(out.astype(float)) > 0


# ---------------------------------------------------------------------------
# annulus crossings and the coarse process


def annulus_crossing(window: SiteGraph, tess: Tessellation, i: int, local_sq, R: float,
                     k: int = 1, metric: str = "l1") -> bool:
    """Is there a k-path in annulus ``i`` with local squared norm <= R joining its two boundaries?

    ``local_sq`` is the per-site occupation (squared norm) computed from the
    loops confined to the cell and its annulus.
    """
    ring = tess.annuli[i]
    if len(ring) == 0:
        return False
    good = np.zeros(window.n_sites, dtype=bool)
    sel = ring[np.asarray(local_sq)[ring] <= R]
    if len(sel) == 0:
        return False
    good[sel] = True
    lab = clusters(window, good, k, metric).labels
    sup = np.abs(window.coords[ring] - tess.centers[i]).max(axis=1)
    inner = ring[sup == tess.n + 1]
    outer = ring[sup == tess.outer]
    a = set(lab[inner][lab[inner] >= 0].tolist())
    return bool(a.intersection(lab[outer][lab[outer] >= 0].tolist()))


def cell_region(window: SiteGraph, tess: Tessellation, i: int) -> np.ndarray:
    m = np.zeros(window.n_sites, dtype=bool)
    m[tess.cells[i]] = True
    m[tess.annuli[i]] = True
    return m


@nb.njit(cache=True)
def _confined_occupation(coords, loop_ptr, sites, hold, centers, lookup, lo_i, lo_j, side, outer):
    """Occupation of the loops lying inside each cell's region (sup radius ``outer``)."""
    W = 2 * outer + 1
    out = np.zeros((centers.shape[0], W, W))
    ni, nj = lookup.shape
    for l in range(loop_ptr.shape[0] - 1):
        a, b = loop_ptr[l], loop_ptr[l + 1]
        x0 = coords[sites[a], 0]
        x1 = x0
        y0 = coords[sites[a], 1]
        y1 = y0
        for p in range(a + 1, b):
            cx = coords[sites[p], 0]
            cy = coords[sites[p], 1]
            x0 = min(x0, cx)
            x1 = max(x1, cx)
            y0 = min(y0, cy)
            y1 = max(y1, cy)
        if x1 - x0 > 2 * outer or y1 - y0 > 2 * outer:
            continue
        # cells whose centre c satisfies c - outer <= min and max <= c + outer
        for i in range(-((outer - x1) // side), (x0 + outer) // side + 1):
            if i - lo_i < 0 or i - lo_i >= ni:
                continue
            for j in range(-((outer - y1) // side), (y0 + outer) // side + 1):
                if j - lo_j < 0 or j - lo_j >= nj:
                    continue
                c = lookup[i - lo_i, j - lo_j]
                if c < 0:
                    continue
                for p in range(a, b):
                    s = sites[p]
                    out[c, coords[s, 0] - centers[c, 0] + outer,
                        coords[s, 1] - centers[c, 1] + outer] += hold[p]
    return out


def confined_squared_norms(window: SiteGraph, tess: Tessellation, soup: LoopSoup) -> np.ndarray:
    """Per cell, the summed local time of loops not leaving the cell and its annulus.

    Returns an array (n_cells, 2*outer+1, 2*outer+1) indexed by offset from the centre.
    """
    ci = tess.cell_index
    lo_i, lo_j = ci.min(axis=0)
    lookup = -np.ones(tuple(ci.max(axis=0) - ci.min(axis=0) + 1), dtype=np.int64)
    lookup[ci[:, 0] - lo_i, ci[:, 1] - lo_j] = np.arange(tess.n_cells)
    occ = _confined_occupation(window.coords.astype(np.int64), soup.loop_ptr,
                               soup.sites.astype(np.int64), soup.hold,
                               tess.centers.astype(np.int64), lookup, int(lo_i), int(lo_j),
                               tess.side, tess.outer)
    single = soup.trivial_rem.sum(axis=1)
    np.add.at(single, soup.pt_site, soup.pt_time)
    r = np.arange(-tess.outer, tess.outer + 1)
    for c in range(tess.n_cells):
        x = tess.centers[c, 0] + r[:, None]
        y = tess.centers[c, 1] + r[None, :]
        idx = _window_index(window, x, y)
        occ[c] += np.where(idx >= 0, single[np.maximum(idx, 0)], 0.0)
    return 2.0 * occ


def _window_index(window: SiteGraph, x, y) -> np.ndarray:
    gx = np.broadcast_to(x - window.origin[0], np.broadcast(x, y).shape)
    gy = np.broadcast_to(y - window.origin[1], gx.shape)
    ok = (gx >= 0) & (gx < window.grid.shape[0]) & (gy >= 0) & (gy < window.grid.shape[1])
    out = np.full(gx.shape, -1, dtype=np.int64)
    out[ok] = window.grid[gx[ok], gy[ok]]
    return out


def cell_crossings(window: SiteGraph, tess: Tessellation, soup: LoopSoup, R: float, k: int = 1,
                   metric: str = "l1") -> np.ndarray:
    """Open/closed indicator per cell, from loops confined to each cell-plus-annulus."""
    occ = confined_squared_norms(window, tess, soup)
    local = build_box(tess.outer)
    lc = local.coords
    sup = np.abs(lc).max(axis=1)
    ring = (sup > tess.n) & (sup <= tess.outer)
    inner = sup == tess.n + 1
    outer = sup == tess.outer
    r = np.arange(-tess.outer, tess.outer + 1)
    out = np.zeros(tess.n_cells, dtype=bool)
    for c in range(tess.n_cells):
        idx = _window_index(window, tess.centers[c, 0] + lc[:, 0], tess.centers[c, 1] + lc[:, 1])
        sq = occ[c][lc[:, 0] + tess.outer, lc[:, 1] + tess.outer]
        good = ring & (idx >= 0) & (sq <= R)
        lab = clusters(local, good, k, metric).labels
        a = lab[inner & good]
        out[c] = bool(set(a.tolist()) & set(lab[outer & good].tolist()))
    return out


def crossings_from_values(window: SiteGraph, tess: Tessellation, sq, R: float, k: int = 1,
                          metric: str = "l1") -> np.ndarray:
    """Open/closed indicator per cell using one global squared-norm field."""
    return np.array([annulus_crossing(window, tess, i, sq, R, k, metric)
                     for i in range(tess.n_cells)], dtype=bool)


@dataclass
class CoarseProcess:
    tess: Tessellation
    open: np.ndarray
    labels: np.ndarray

    @property
    def density(self) -> float:
        return float(self.open.mean()) if len(self.open) else 0.0

    def cluster_sizes(self) -> np.ndarray:
        lab = self.labels
        return np.bincount(lab[lab >= 0]) if np.any(lab >= 0) else np.zeros(0, dtype=np.int64)

    def cluster_spans(self) -> np.ndarray:
        """Number of cells spanned by each coarse cluster (largest index extent plus one)."""
        lab = self.labels
        nc = int(lab.max()) + 1 if np.any(lab >= 0) else 0
        if nc == 0:
            return np.zeros(0, dtype=np.int64)
        idx = self.tess.cell_index[lab >= 0]
        ll = lab[lab >= 0]
        out = np.zeros(nc, dtype=np.int64)
        for ax in range(2):
            hi = np.full(nc, np.iinfo(np.int64).min)
            lo = np.full(nc, np.iinfo(np.int64).max)
            np.maximum.at(hi, ll, idx[:, ax])
            np.minimum.at(lo, ll, idx[:, ax])
            out = np.maximum(out, hi - lo + 1)
        return out

    def max_span(self) -> int:
        s = self.cluster_spans()
        return int(s.max()) if len(s) else 0


def renormalize(tess: Tessellation, indicators) -> CoarseProcess:
    """Coarse site process on the cells; clusters use sup-norm (diagonal) adjacency.

    Excluded cells are treated as closed.
    """
    op = np.asarray(indicators, dtype=bool) & ~tess.excluded
    adj = tess.adjacency(diagonal=True)
    lab = edge_labels(tess.n_cells, adj, op[adj[:, 0]] & op[adj[:, 1]], op)
    return CoarseProcess(tess, op, lab)


def transfer_holds(fine: ClusterLabeling, coarse: CoarseProcess, factor: float = 0.2) -> bool:
    """Every fine cluster of sup-diameter l > 5n lies under a coarse cluster spanning >= factor*l/n cells."""
    n = coarse.tess.n
    d = fine.diameters("linf")
    big = np.flatnonzero(d > 5 * n)
    if len(big) == 0:
        return True
    return coarse.max_span() >= factor * d[big].max() / n


# ---------------------------------------------------------------------------
# exponential decay fits


@dataclass
class DecayFit:
    distance: np.ndarray
    probability: np.ndarray
    stderr: np.ndarray
    rate: float
    rate_stderr: float
    intercept: float
    r2: float
    dropped: list = field(default_factory=list)

    def ci(self, level: float = 0.95) -> tuple:
        z = stats.norm.ppf(0.5 + level / 2)
        return self.rate - z * self.rate_stderr, self.rate + z * self.rate_stderr

    def predict(self, r) -> np.ndarray:
        return np.exp(self.intercept - self.rate * np.asarray(r, dtype=float))


def fit_decay(distance, probability, stderr=None, min_points: int = 4) -> DecayFit:
    """Weighted least squares of log p against distance; p ~ exp(a - rate * r).

    Weights are (p / stderr)^2 (delta method); distances with nonpositive
    estimates are dropped with a warning.  Without stderr the fit is unweighted.
    """
    r = np.asarray(distance, dtype=float)
    p = np.asarray(probability, dtype=float)
    se = np.zeros_like(p) if stderr is None else np.asarray(stderr, dtype=float)
    bad = ~(p > 0)
    dropped = r[bad].tolist()
    if dropped:
        warnings.warn(f"dropping distances with zero estimate: {dropped}", RuntimeWarning)
    r, p, se = r[~bad], p[~bad], se[~bad]
    if len(r) < min_points:
        raise ValueError(f"need at least {min_points} distances with positive estimates")
    y = np.log(p)
    if np.all(se > 0):
        w = (p / se) ** 2
    else:
        w = np.ones_like(p)
    X = np.stack([np.ones_like(r), r], axis=1)
    XtW = X.T * w
    A = XtW @ X
    coef = np.linalg.solve(A, XtW @ y)
    res = y - X @ coef
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * res ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    cov = np.linalg.inv(A)
    if not np.all(se > 0):
        dof = max(len(r) - 2, 1)
        cov = cov * ss_res / dof
    else:
        cov = cov * max(1.0, ss_res / max(len(r) - 2, 1))
    return DecayFit(r, p, se, float(-coef[1]), float(math.sqrt(max(cov[1, 1], 0.0))),
                    float(coef[0]), float(r2), dropped)


def decay_scan(estimator: Callable, distances: Sequence[int], replicas: int, seed: int,
               min_points: int = 4) -> DecayFit:
    """Run ``estimator(rng, distances) -> indicator vector`` per replica and fit the decay."""
    d = np.asarray(distances)
    X = np.array([estimator(replica_rng(seed, r), d) for r in range(replicas)], dtype=float)
    p = X.mean(axis=0)
    se = X.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros(len(d))
    return fit_decay(d, p, se, min_points)


@dataclass
class TailFit:
    """Survival function S(t) = P(statistic >= t) with an exponential fit."""

    t: np.ndarray
    survival: np.ndarray
    fit: Optional[DecayFit]
    largest: int
    count: int

    @property
    def exponential(self) -> bool:
        """R^2 > 0.9 and a positive rate whose 95% interval excludes 0."""
        return bool(self.fit is not None and self.fit.r2 > 0.9 and self.fit.ci()[0] > 0)


def tail_fit(values, weights=None, tmin: int = 1, min_count: int = 5) -> TailFit:
    """Empirical survival of nonnegative integer ``values`` and its log-linear fit.

    Points are kept while at least ``min_count`` (weighted) observations remain above.
    """
    v = np.asarray(values, dtype=np.int64)
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float)
    if len(v) == 0:
        return TailFit(np.zeros(0), np.zeros(0), None, 0, 0)
    hist = np.bincount(v, weights=w)
    tot = hist.sum()
    surv_cnt = np.cumsum(hist[::-1])[::-1]
    t = np.arange(len(hist))
    keep = (t >= tmin) & (surv_cnt >= min_count)
    S = surv_cnt / tot
    fit = None
    if keep.sum() >= 4:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_decay(t[keep], S[keep])
    return TailFit(t[keep], S[keep], fit, int(v.max()), len(v))


# ---------------------------------------------------------------------------
# G_m graphs


@dataclass
class GmGraph:
    m: float
    beta: float
    mask: np.ndarray
    graph: SiteGraph
    seed: Optional[int] = None

    @property
    def density(self) -> float:
        return float(self.mask.mean())

    def edge_mask(self) -> np.ndarray:
        e = self.graph.edges
        return self.mask[e[:, 0]] & self.mask[e[:, 1]]


def build_Gm(soup: LoopSoup, masses: Sequence[float], beta: float, seed=None) -> list:
    """Sites where the m-massive squared norm (summed local time) exceeds beta, for each m.

    Masses are processed in increasing order by successive thinning of ``soup``,
    so the returned masks are nested.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    out = []
    cur = soup
    sd = seed if isinstance(seed, (int, np.integer)) else None
    for m in sorted(masses):
        cur = massive_thinning(cur, m)
        sq = local_time(cur).total
        out.append(GmGraph(float(m), float(beta), sq > beta, soup.graph, sd))
    return out


@dataclass
class ComplementTail:
    diameter: TailFit
    size: TailFit
    density: float
    giant_fraction: float

    @property
    def exponential(self) -> bool:
        return self.diameter.exponential


def complement_tail(gm: GmGraph, k: int = 0, metric: str = "l1") -> ComplementTail:
    """Cluster tails of the complement of G_m (or of its k-neighbourhood when k >= 1).

    The diameter tail is site-weighted: S(r) = fraction of complement sites whose
    cluster has diameter >= r.  A giant complement cluster shows up as a plateau.
    """
    comp = ~gm.mask & ~gm.graph.boundary
    if k >= 1:
        comp = dilate(gm.graph, comp, k, metric) & ~gm.graph.boundary
    cl = clusters(gm.graph, comp, 1, "l1")
    sizes = cl.sizes()
    sd = cl.site_diameters("linf")
    sd = sd[sd >= 0]
    nmask = max(int(comp.sum()), 1)
    return ComplementTail(tail_fit(sd, tmin=1), tail_fit(sizes, tmin=1),
                          float(comp.mean()), float(sizes.max() / nmask) if len(sizes) else 0.0)


@dataclass
class BernoulliDiagnostics:
    p: float
    spans: bool
    largest_fraction: float
    closed_density: float
    closed_max_diameter: int
    closed_tail: TailFit


def closed_dual_clusters(graph: SiteGraph, closed_edges) -> tuple:
    """Clusters of plaquettes joined across closed edges of a box.

    Returns (labels over the plaquette grid with -1 for untouched plaquettes,
    per-cluster L-infinity diameters in plaquette units).
    """
    e = graph.edges[np.asarray(closed_edges, dtype=bool)]
    lo = graph.coords.min(axis=0)
    w = graph.coords.max(axis=0) - lo  # plaquettes per axis
    a = graph.coords[e[:, 0]] - lo
    b = graph.coords[e[:, 1]] - lo
    base = np.minimum(a, b)
    horiz = a[:, 0] != b[:, 0]
    # a horizontal edge separates the plaquettes below and above it
    p = np.where(horiz[:, None], base - [0, 1], base - [1, 0])
    q = base
    ok_p = np.all((p >= 0) & (p < w), axis=1)
    ok_q = np.all((q >= 0) & (q < w), axis=1)
    both = ok_p & ok_q
    n = int(w[0] * w[1])
    ip = p[:, 0] * w[1] + p[:, 1]
    iq = q[:, 0] * w[1] + q[:, 1]
    touched = np.zeros(n, dtype=bool)
    touched[ip[ok_p]] = True
    touched[iq[ok_q]] = True
    pairs = np.stack([ip[both], iq[both]], axis=1).astype(np.int64)
    lab = edge_labels(n, pairs, np.ones(len(pairs), dtype=bool), touched)
    nl = int(lab.max()) + 1 if n else 0
    if nl == 0:
        return lab.reshape(tuple(w)), np.zeros(0, dtype=np.int64)
    idx = np.flatnonzero(lab >= 0)
    L = lab[idx]
    ext = []
    for c in (idx // w[1], idx % w[1]):
        hi = np.full(nl, -1, dtype=np.int64)
        lo_ = np.full(nl, n, dtype=np.int64)
        np.maximum.at(hi, L, c)
        np.minimum.at(lo_, L, c)
        ext.append(hi - lo_)
    return lab.reshape(tuple(w)), np.maximum(ext[0], ext[1])


def bernoulli_on_Gm(gm: GmGraph, p: float, seed=None) -> BernoulliDiagnostics:
    """i.i.d. edge percolation of intensity ``p`` on the edges of G_m.

    ``spans``: an open cluster joins the first and last interior columns.
    Closed edges are the interior edges that are not open (closed by the
    Bernoulli variable or not in G_m); the clusters of their dual edges are
    the closed clusters whose diameters are reported.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    rng = make_rng(seed)
    g = gm.graph
    e = g.edges
    inside = gm.edge_mask()
    op = inside & (rng.random(len(e)) < p)
    lab = edge_labels(g.n_sites, e, op, gm.mask)
    x = g.coords[:, 0]
    interior = ~g.boundary
    xl, xr = x[interior].min(), x[interior].max()
    left = set(lab[(x == xl) & (lab >= 0)].tolist())
    right = set(lab[(x == xr) & (lab >= 0)].tolist())
    spans = bool(left & right)
    n_in = max(int(gm.mask.sum()), 1)
    largest = np.bincount(lab[lab >= 0]).max() / n_in if np.any(lab >= 0) else 0.0
    int_edge = interior[e[:, 0]] & interior[e[:, 1]]
    closed = int_edge & ~op
    plab, d = closed_dual_clusters(g, closed)
    flat = plab[plab >= 0]
    sd = d[flat] if len(d) else np.zeros(0, dtype=np.int64)
    return BernoulliDiagnostics(float(p), spans, float(largest),
                                float(closed.sum() / max(int(int_edge.sum()), 1)),
                                int(d.max()) if len(d) else 0, tail_fit(sd))


def outside_probability(gms: Sequence[GmGraph], site_mask=None) -> np.ndarray:
    """Fraction of (selected) sites outside G_m for each graph."""
    sel = np.ones(gms[0].graph.n_sites, dtype=bool) if site_mask is None else site_mask
    return np.array([float(np.mean(~g.mask[sel])) for g in gms])
