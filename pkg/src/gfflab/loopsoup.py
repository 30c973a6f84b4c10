"""Labelled random-walk loop soups, occupation fields and the massive thinning coupling.

Continuous-time conventions: a walk at x waits an Exp(lambda_x) time,
``lambda_x = deg(x) + m^2``, then jumps to each graph neighbour with rate 1 or
is killed with rate m^2.  The reported local time is twice the occupation
time, so that at intensity 1/2 per label it has the law of the squared field
component: ``E L^i(x) = G(x, x)``.

Sampling uses the vertex-ordering decomposition.  Visiting interior sites in
index order, the loops whose first site (in that order) is v are exactly the
excursions from v of a walk killed on the zeroset and on earlier sites, with
the excursion list split into loops by the cycle structure of a uniform
permutation.  That realises intensity 1 per pass; each loop then receives a
label uniform on 2M values, where M = ceil(N/2) passes are made, and labels
beyond N are discarded, leaving N independent intensity-1/2 soups.

One-site loops are kept in aggregated form.  Their occupation at (x, i) is
``rem + sum of point times t_j with s_j >= m^2 - m0^2``; ``rem`` is
Gamma(1/2, 1/(lambda_x + S)) and the finitely many points (t_j, s_j) are the
loops that a mass increase up to ``S`` can remove.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numba as nb
import numpy as np

from .harmonic import SingularSystemError, _zeroset_mask
from .lattice import SiteGraph
from .rng import make_rng


@nb.njit(cache=True)
def _grow_i(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=a.dtype)
    b[:a.shape[0]] = a
    return b


@nb.njit(cache=True)
def _grow_f(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=a.dtype)
    b[:a.shape[0]] = a
    return b


@nb.njit(cache=True)
def _soup_pass(nbr_ptr, nbr, lam, zeroset, order, rng, sites, holds, loop_ptr, roots, nv, nl):
    """One intensity-1 pass; appends loops to the growing buffers."""
    n = lam.shape[0]
    killed = zeroset.copy()
    bs = np.empty(64, dtype=np.int32)
    bh = np.empty(64, dtype=np.float64)
    starts = np.empty(16, dtype=np.int64)
    for v in order:
        # walk from v until killed
        m = 0
        ne = 0
        x = v
        bs = _grow_i(bs, m + 1)
        bh = _grow_f(bh, m + 1)
        bs[m] = v
        bh[m] = rng.exponential(1.0 / lam[v])
        m += 1
        starts = _grow_i(starts, ne + 1)
        starts[ne] = 0
        ne += 1
        while True:
            deg = nbr_ptr[x + 1] - nbr_ptr[x]
            u = rng.random() * lam[x]
            if u >= deg:
                break
            y = nbr[nbr_ptr[x] + int(u)]
            if killed[y]:
                break
            bs = _grow_i(bs, m + 1)
            bh = _grow_f(bh, m + 1)
            bs[m] = y
            bh[m] = rng.exponential(1.0 / lam[y])
            if y == v:
                starts = _grow_i(starts, ne + 1)
                starts[ne] = m
                ne += 1
            m += 1
            x = y
        killed[v] = True
        K = ne - 1
        if K == 0:
            continue
        # excursion e occupies bs[starts[e]:starts[e+1]]
        e = 0
        remaining = K
        while remaining > 0:
            size = 1 + int(rng.random() * remaining)
            a = starts[e]
            b = starts[e + size]
            ln = b - a
            sites = _grow_i(sites, nv + ln)
            holds = _grow_f(holds, nv + ln)
            sites[nv:nv + ln] = bs[a:b]
            holds[nv:nv + ln] = bh[a:b]
            nv += ln
            loop_ptr = _grow_i(loop_ptr, nl + 2)
            roots = _grow_i(roots, nl + 1)
            loop_ptr[nl + 1] = nv
            roots[nl] = v
            nl += 1
            e += size
            remaining -= size
    return sites, holds, loop_ptr, roots, nv, nl


@dataclass
class LoopSoup:
    """Labelled soup; loop ``l`` visits ``sites[loop_ptr[l]:loop_ptr[l+1]]`` cyclically.

    ``hold`` holds the waiting time of each visit.  Labels are 0-based.
    """

    graph: SiteGraph
    zeroset: np.ndarray
    N: int
    mass: float
    loop_ptr: np.ndarray
    sites: np.ndarray
    hold: np.ndarray
    label: np.ndarray
    root: np.ndarray
    mark: np.ndarray
    trivial_rem: np.ndarray
    pt_site: np.ndarray
    pt_label: np.ndarray
    pt_time: np.ndarray
    pt_s: np.ndarray
    removable: float

    @property
    def n_loops(self) -> int:
        return len(self.label)

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.loop_ptr)

    def durations(self) -> np.ndarray:
        """Total waiting time of every loop."""
        if self.n_loops == 0:
            return np.zeros(0)
        c = np.r_[0.0, np.cumsum(self.hold)]
        return c[self.loop_ptr[1:]] - c[self.loop_ptr[:-1]]

    def loop(self, l: int) -> np.ndarray:
        return self.sites[self.loop_ptr[l]:self.loop_ptr[l + 1]]

    def loops_of(self, label: int):
        return np.flatnonzero(self.label == label)


def _lam(graph: SiteGraph, mass: float) -> np.ndarray:
    return graph.degree.astype(float) + mass ** 2


def _empty_soup(graph, zs, N, mass, removable):
    z_i = np.zeros(0, dtype=np.int64)
    z_f = np.zeros(0)
    return LoopSoup(graph, zs, N, mass, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int32),
                    z_f, np.zeros(0, dtype=np.int16), np.zeros(0, dtype=np.int32), z_f,
                    np.zeros((graph.n_sites, N)), z_i, z_i, z_f, z_f, removable)


def sample_soup(graph: SiteGraph, zeroset=None, N: int = 1, mass: float = 0.0, seed=None,
                mass_cap: float = 2.0) -> LoopSoup:
    """Intensity-1/2-per-label soup killed on ``zeroset`` (default boundary) and by mass.

    ``mass_cap`` bounds the masses later reachable by :func:`massive_thinning`.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    zs = _zeroset_mask(graph, zeroset)
    if not zs.any() and mass == 0:
        raise SingularSystemError("no killing: empty zeroset and zero mass")
    if mass_cap < mass:
        mass_cap = mass
    rng = make_rng(seed)
    lam = _lam(graph, mass)
    order = np.flatnonzero(~zs).astype(np.int64)
    M = (N + 1) // 2
    sites = np.empty(1024, dtype=np.int32)
    holds = np.empty(1024)
    loop_ptr = np.zeros(256, dtype=np.int64)
    roots = np.empty(256, dtype=np.int32)
    nv = nl = 0
    for _ in range(M):
        sites, holds, loop_ptr, roots, nv, nl = _soup_pass(
            graph.nbr_ptr, graph.nbr, lam, zs, order, rng, sites, holds, loop_ptr, roots, nv, nl)
    label = rng.integers(0, 2 * M, size=nl)
    keep = label < N
    lens = np.diff(loop_ptr[:nl + 1])
    vkeep = np.repeat(keep, lens)
    new_ptr = np.zeros(keep.sum() + 1, dtype=np.int64)
    np.cumsum(lens[keep], out=new_ptr[1:])
    mark = rng.random(int(keep.sum()))
    # one-site loops
    S = mass_cap ** 2 - mass ** 2
    free = ~zs
    rem = np.zeros((graph.n_sites, N))
    rem[free] = rng.gamma(0.5, 1.0 / (lam[free, None] + S), size=(int(free.sum()), N))
    if S > 0:
        mu = 0.5 * np.log1p(S / lam[free])
        cnt = rng.poisson(np.repeat(mu[:, None], N, axis=1))
        fi = np.flatnonzero(free)
        pt_site = np.repeat(np.repeat(fi, N), cnt.ravel())
        pt_label = np.repeat(np.tile(np.arange(N), len(fi)), cnt.ravel())
        lx = lam[pt_site]
        s = lx * ((1.0 + S / lx) ** rng.random(len(pt_site)) - 1.0)
        t = rng.exponential(1.0 / (lx + s))
    else:
        pt_site = pt_label = np.zeros(0, dtype=np.int64)
        s = t = np.zeros(0)
    return LoopSoup(graph, zs, N, float(mass), new_ptr, sites[:nv][vkeep], holds[:nv][vkeep],
                    label[keep].astype(np.int16), roots[:nl][keep], mark, rem,
                    pt_site.astype(np.int64), pt_label.astype(np.int64), t, s, float(S))


@dataclass
class LocalTimeField:
    """Per-site, per-label local times; ``values`` has shape (n_sites, N)."""

    graph: SiteGraph
    values: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def to_csv(self, path) -> None:
        c = self.graph.coords
        with open(path, "w") as fh:
            fh.write("x1,x2,label,local_time\n")
            for x in range(self.graph.n_sites):
                for i in range(self.values.shape[1]):
                    fh.write(f"{c[x, 0]},{c[x, 1]},{i + 1},{self.values[x, i]!r}\n")


def local_time(soup: LoopSoup, confine: Optional[np.ndarray] = None) -> LocalTimeField:
    """Twice the occupation time per site and label.

    With ``confine`` (a site mask), only loops staying inside it contribute.
    """
    n, N = soup.graph.n_sites, soup.N
    L = np.zeros((n, N))
    if soup.n_loops:
        lab = np.repeat(soup.label.astype(np.int64), soup.lengths)
        w = soup.hold
        if confine is not None:
            inside = confine[soup.sites]
            ok = np.minimum.reduceat(inside.astype(np.int8), soup.loop_ptr[:-1]) > 0 \
                if len(soup.sites) else np.zeros(0, dtype=bool)
            w = w * np.repeat(ok, soup.lengths)
        np.add.at(L, (soup.sites.astype(np.int64), lab), w)
    L += soup.trivial_rem
    np.add.at(L, (soup.pt_site, soup.pt_label), soup.pt_time)
    if confine is not None:
        L[~confine] = 0.0
    return LocalTimeField(soup.graph, 2.0 * L)


def massive_thinning(soup: LoopSoup, m: float, seed=None) -> LoopSoup:
    """Soup at mass ``m >= soup.mass`` coupled to ``soup`` by deletion only.

    A loop of total waiting time tau survives iff its stored mark is below
    ``exp(-(m^2 - m0^2) tau)``; marks are rescaled so repeated thinning is
    consistent.  ``seed`` is accepted for interface symmetry and unused: all
    randomness is stored in the soup.
    """
    d = m * m - soup.mass ** 2
    if d < -1e-15:
        raise ValueError("thinning can only increase the mass")
    if d <= 0:
        return soup
    if d > soup.removable + 1e-12:
        raise ValueError(f"mass {m} exceeds the coupling cap of this soup")
    w = np.exp(-d * soup.durations())
    keep = soup.mark < w
    lens = soup.lengths
    vkeep = np.repeat(keep, lens)
    ptr = np.zeros(keep.sum() + 1, dtype=np.int64)
    np.cumsum(lens[keep], out=ptr[1:])
    pk = soup.pt_s >= d
    return replace(soup, mass=float(m), loop_ptr=ptr, sites=soup.sites[vkeep],
                   hold=soup.hold[vkeep], label=soup.label[keep], root=soup.root[keep],
                   mark=soup.mark[keep] / w[keep], pt_site=soup.pt_site[pk],
                   pt_label=soup.pt_label[pk], pt_time=soup.pt_time[pk], pt_s=soup.pt_s[pk] - d,
                   removable=soup.removable - d)


def merge(a: LoopSoup, b: LoopSoup) -> LoopSoup:
    """Superposition of two soups on the same graph (labels kept)."""
    if a.graph is not b.graph:
        raise ValueError("soups live on different graphs")
    return replace(a, N=max(a.N, b.N), loop_ptr=np.r_[a.loop_ptr, b.loop_ptr[1:] + a.loop_ptr[-1]],
                   sites=np.r_[a.sites, b.sites], hold=np.r_[a.hold, b.hold],
                   label=np.r_[a.label, b.label], root=np.r_[a.root, b.root],
                   mark=np.r_[a.mark, b.mark], trivial_rem=a.trivial_rem + b.trivial_rem,
                   pt_site=np.r_[a.pt_site, b.pt_site], pt_label=np.r_[a.pt_label, b.pt_label],
                   pt_time=np.r_[a.pt_time, b.pt_time], pt_s=np.r_[a.pt_s, b.pt_s],
                   removable=min(a.removable, b.removable))


def relabel(soup: LoopSoup, seed=None) -> LoopSoup:
    """Fresh uniform labels for the multi-site loops; one-site aggregates unchanged."""
    rng = make_rng(seed)
    return replace(soup, label=rng.integers(0, soup.N, size=soup.n_loops).astype(np.int16))


@nb.njit(cache=True)
def _crossings(nbr_ptr, nbr, nbr_edge, loop_ptr, sites, label, which, n_edges):
    out = np.zeros(n_edges, dtype=np.bool_)
    for l in range(label.shape[0]):
        if label[l] != which:
            continue
        a = loop_ptr[l]
        b = loop_ptr[l + 1]
        for p in range(a, b):
            x = sites[p]
            y = sites[p + 1] if p + 1 < b else sites[a]
            for q in range(nbr_ptr[x], nbr_ptr[x + 1]):
                if nbr[q] == y:
                    out[nbr_edge[q]] = True
                    break
    return out


def crossed_edges(soup: LoopSoup, label: int = 0) -> np.ndarray:
    """Edges jumped across by some loop carrying ``label``."""
    g = soup.graph
    return _crossings(g.nbr_ptr, g.nbr, g.nbr_edge, soup.loop_ptr, soup.sites, soup.label,
                      label, g.n_edges)
