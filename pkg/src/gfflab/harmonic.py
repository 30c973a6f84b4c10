"""Laplacian solves: Green's functions, harmonic extensions, hitting laws.

All operators use the graph Laplacian with unit conductances,
``(Q f)(x) = deg(x) f(x) - sum_{y ~ x} f(y) + m^2 f(x)``, where ``deg`` counts
every graph neighbour (zeroset neighbours included).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .lattice import SiteGraph

DIRECT_LIMIT = 1_000_000
SINGLE_RHS_LIMIT = 50_000
RTOL = 1e-11


class SingularSystemError(ValueError):
    """Raised when the Dirichlet problem has no killing (no zeroset, no mass)."""


def laplacian(graph: SiteGraph, mass: float = 0.0) -> sp.csr_matrix:
    """Sparse ``deg - A + m^2`` on all sites of ``graph``."""
    n = graph.n_sites
    e = graph.edges
    A = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                      shape=(n, n)).tocsr()
    d = np.asarray(A.sum(axis=1)).ravel() + mass ** 2
    return (sp.diags(d) - A).tocsr()


def _zeroset_mask(graph: SiteGraph, zeroset) -> np.ndarray:
    if zeroset is None:
        return graph.boundary.copy()
    if isinstance(zeroset, str) and zeroset == "boundary":
        return graph.boundary.copy()
    return graph.mask(zeroset)


class _Solver:
    """Factorised solve of ``Q_UU x = b`` on the free sites U."""

    def __init__(self, Q: sp.csr_matrix, method: str = "auto"):
        self.n = Q.shape[0]
        if method == "auto":
            method = "direct" if self.n <= DIRECT_LIMIT else "krylov"
        elif method == "single":
            method = "direct" if self.n <= SINGLE_RHS_LIMIT else "krylov"
        self.method = method
        self.Q = Q.tocsc() if method == "direct" else Q.tocsr()
        if method == "direct":
            self._lu = spla.splu(self.Q)
        else:
            import pyamg
            self._ml = pyamg.ruge_stuben_solver(self.Q)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.method == "direct":
            return self._lu.solve(np.asarray(b, dtype=float))
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return np.stack([self.solve(b[:, j]) for j in range(b.shape[1])], axis=1)
        res: list = []
        x = self._ml.solve(b, tol=RTOL, accel="cg", maxiter=500, residuals=res)
        if res[-1] > RTOL * 10 * max(res[0], 1e-300):
            raise RuntimeError("Krylov solve did not reach tolerance")
        return x


class GreenFn:
    """Green's function of ``-Delta + m^2`` with zero values on ``zeroset``.

    Columns are computed lazily from one sparse factorisation and cached.
    Sites may be given as indices or coordinate pairs.
    """

    def __init__(self, graph: SiteGraph, zeroset=None, mass: float = 0.0, method: str = "auto"):
        self.graph = graph
        self.mass = float(mass)
        if self.mass < 0:
            raise ValueError("mass must be nonnegative")
        self.zeroset = _zeroset_mask(graph, zeroset)
        if not self.zeroset.any() and self.mass == 0.0:
            raise SingularSystemError("empty zeroset with zero mass: Laplacian is singular")
        self.free = np.flatnonzero(~self.zeroset)
        self._pos = np.full(graph.n_sites, -1, dtype=np.int64)
        self._pos[self.free] = np.arange(len(self.free))
        Q = laplacian(graph, self.mass)
        self.Q_free = Q[self.free][:, self.free].tocsr()
        self._solver = _Solver(self.Q_free, method) if len(self.free) else None
        self._cols: dict = {}

    def column(self, y) -> np.ndarray:
        """G(., y) as a full-length array (zero on the zeroset)."""
        j = self.graph.index(y)
        if j in self._cols:
            return self._cols[j]
        out = np.zeros(self.graph.n_sites)
        if not self.zeroset[j]:
            b = np.zeros(len(self.free))
            b[self._pos[j]] = 1.0
            out[self.free] = self._solver.solve(b)
        out.setflags(write=False)
        self._cols[j] = out
        return out

    def __call__(self, x, y) -> float:
        return float(self.column(y)[self.graph.index(x)])

    def diag(self, sites=None) -> np.ndarray:
        idx = np.arange(self.graph.n_sites) if sites is None else self.graph.indices(sites)
        return np.array([self.column(int(i))[i] for i in idx])

    def matrix(self) -> np.ndarray:
        """Dense kernel on all sites; intended for small graphs."""
        n = self.graph.n_sites
        G = np.zeros((n, n))
        if len(self.free):
            inv = self._solver.solve(np.eye(len(self.free)))
            G[np.ix_(self.free, self.free)] = inv
        return G

    def residual(self, y) -> float:
        """Max-norm residual of ``Q G(., y) = delta_y`` on free sites."""
        j = self.graph.index(y)
        g = self.column(j)[self.free]
        r = self.Q_free @ g
        if not self.zeroset[j]:
            r[self._pos[j]] -= 1.0
        return float(np.abs(r).max()) if len(r) else 0.0

    def to_csv(self, path, pairs=None) -> None:
        """Write ``x1,x2,y1,y2,G`` rows for the given index pairs (all pairs if None)."""
        n = self.graph.n_sites
        if pairs is None:
            pairs = [(i, j) for j in range(n) for i in range(n)]
        c = self.graph.coords
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "y1", "y2", "G"])
            for i, j in pairs:
                i, j = self.graph.index(i), self.graph.index(j)
                w.writerow([c[i, 0], c[i, 1], c[j, 0], c[j, 1], repr(self(i, j))])


def green(graph: SiteGraph, zeroset=None, mass: float = 0.0, method: str = "auto") -> GreenFn:
    """Green's function on ``graph``; ``zeroset`` defaults to the graph boundary."""
    return GreenFn(graph, zeroset, mass, method)


def torus_eigenvalues(L: int, mass: float = 0.0) -> np.ndarray:
    k = 2 * np.pi * np.arange(L) / L
    c = np.cos(k)
    return 4.0 - 2.0 * c[:, None] - 2.0 * c[None, :] + mass ** 2


def rooted_torus_green_diag(L: int) -> np.ndarray:
    """Exact G(v, v) on the L-torus with zeroset {0}, as an (L, L) array.

    Uses ``G(v,v) = (2/L^2) sum_{k != 0} (1 - cos k.v) / lambda_k``.
    """
    lam = torus_eigenvalues(L)
    w = np.zeros_like(lam)
    w[lam > 1e-14] = 1.0 / lam[lam > 1e-14]
    w[0, 0] = 0.0
    s = w.sum()
    c = np.fft.fft2(w).real
    return 2.0 * (s - c) / L ** 2


def rooted_torus_covariance(L: int, u, v) -> float:
    """Exact G(u, v) on the L-torus with zeroset {0}."""
    lam = torus_eigenvalues(L)
    w = np.zeros_like(lam)
    nz = lam > 1e-14
    w[nz] = 1.0 / lam[nz]
    k = 2 * np.pi * np.arange(L) / L
    ku = k[:, None] * u[0] + k[None, :] * u[1]
    kv = k[:, None] * v[0] + k[None, :] * v[1]
    val = (1 - np.cos(ku) - np.cos(kv) + np.cos(ku - kv)) * w
    return float(val.sum() / L ** 2)


@dataclass
class GreenSlopeFit:
    slope: float
    constant: float
    r2: float
    radii: np.ndarray
    values: np.ndarray


def green_slope_fit(n: int, rmin: float = 8.0, rmax: Optional[float] = None) -> GreenSlopeFit:
    """Fit ``G(v,v) = a log|v| + C`` for the zeroset-{0} kernel on a window of half-width n.

    The window is realised as the torus of side 2n+1 rooted at the origin.
    """
    L = 2 * n + 1
    diag = rooted_torus_green_diag(L)
    if rmax is None:
        rmax = n / 8
    x = np.arange(L)
    x = np.where(x > L // 2, x - L, x)
    r = np.hypot(x[:, None], x[None, :])
    sel = (r >= rmin) & (r <= rmax)
    lr = np.log(r[sel])
    g = diag[sel]
    A = np.stack([lr, np.ones_like(lr)], axis=1)
    coef, *_ = np.linalg.lstsq(A, g, rcond=None)
    pred = A @ coef
    r2 = 1 - np.sum((g - pred) ** 2) / np.sum((g - g.mean()) ** 2)
    return GreenSlopeFit(float(coef[0]), float(coef[1]), float(r2), r[sel], g)


@dataclass(frozen=True)
class HarmonicData:
    """Harmonic extension of values prescribed on ``prescribed`` sites."""

    graph: SiteGraph
    explored: np.ndarray
    prescribed: np.ndarray
    values: np.ndarray


def _free_components(graph: SiteGraph, free: np.ndarray):
    sub = graph.edges[free[graph.edges[:, 0]] & free[graph.edges[:, 1]]]
    n = graph.n_sites
    adj = sp.coo_matrix((np.ones(len(sub)), (sub[:, 0], sub[:, 1])), shape=(n, n))
    _, lab = csgraph.connected_components(adj, directed=False)
    return lab


def harmonic_extension(graph: SiteGraph, A, values, mass: float = 0.0) -> HarmonicData:
    """Extend ``values`` from ``A`` union boundary harmonically to all sites.

    ``values`` is a per-site array of shape (n_sites,) or (n_sites, N); only
    entries on ``A`` union boundary are read.
    """
    explored = graph.mask(A) if not (isinstance(A, np.ndarray) and A.dtype == bool) else A.copy()
    pres = explored | graph.boundary
    if not pres.any():
        raise ValueError("nothing prescribed")
    vals = np.asarray(values, dtype=float)
    vec = vals.ndim == 2
    V = vals if vec else vals[:, None]
    out = np.zeros_like(V)
    out[pres] = V[pres]
    free = ~pres
    if free.any():
        if mass == 0.0:
            lab = _free_components(graph, free)
            touch = np.zeros(lab.max() + 1, dtype=bool)
            e = graph.edges
            cross = free[e[:, 0]] != free[e[:, 1]]
            fe = np.where(free[e[cross, 0]], e[cross, 0], e[cross, 1])
            touch[lab[fe]] = True
            if not touch[lab[free]].all():
                raise SingularSystemError("a free component does not touch the prescribed set")
        Q = laplacian(graph, mass)
        fi = np.flatnonzero(free)
        pi = np.flatnonzero(pres)
        rhs = -(Q[fi][:, pi] @ V[pi])
        sol = _Solver(Q[fi][:, fi], "single" if V.shape[1] == 1 else "auto").solve(rhs)
        out[fi] = sol.reshape(len(fi), -1)
    return HarmonicData(graph, explored, pres, out if vec else out[:, 0])


def hitting_probs(graph: SiteGraph, target, v, mass: float = 0.0) -> dict:
    """Law of the first site of ``target`` hit by simple random walk from ``v``.

    Returns a dict mapping site index to probability.  Only the connected
    component of ``v`` in the complement of ``target`` is solved.
    """
    tgt = graph.mask(target) if not (isinstance(target, np.ndarray) and target.dtype == bool) \
        else target.copy()
    if not tgt.any():
        raise ValueError("target must be nonempty")
    iv = graph.index(v)
    if tgt[iv]:
        return {iv: 1.0}
    free = ~tgt
    lab = _free_components(graph, free)
    comp = np.flatnonzero(free & (lab == lab[iv]))
    pos = np.full(graph.n_sites, -1, dtype=np.int64)
    pos[comp] = np.arange(len(comp))
    Q = laplacian(graph, mass)[comp][:, comp]
    b = np.zeros(len(comp))
    b[pos[iv]] = 1.0
    g = _Solver(Q, "single").solve(b)
    e = graph.edges
    out: dict = {}
    for a, c in ((0, 1), (1, 0)):
        sel = (pos[e[:, a]] >= 0) & tgt[e[:, c]]
        for u, s in zip(e[sel, a], e[sel, c]):
            out[int(s)] = out.get(int(s), 0.0) + g[pos[u]]
    if mass == 0.0 and not out:
        raise SingularSystemError("target unreachable from v")
    return out


@dataclass(frozen=True)
class MWTestFunction:
    """S = pi G(y, .) / G(y, y) for the Green's function vanishing only at x."""

    S: np.ndarray
    energy: float
    green_yy: float
    x: int
    y: int


def dirichlet_energy(graph: SiteGraph, f: np.ndarray) -> float:
    e = graph.edges
    d = f[e[:, 0]] - f[e[:, 1]]
    return float(np.sum(d * d))


def mw_test_function(graph: SiteGraph, x, y, G: Optional[GreenFn] = None) -> MWTestFunction:
    """Slowly varying angle used in the rotation argument.

    ``S(x) = 0``, ``S(y) = pi`` and ``S`` is harmonic off {x, y}.  The graph's
    own boundary is ignored: the only zero condition is at ``x``.
    """
    ix, iy = graph.index(x), graph.index(y)
    if ix == iy:
        raise ValueError("x and y must differ")
    if G is None:
        G = GreenFn(graph, zeroset=[ix])
    elif not (G.zeroset.sum() == 1 and G.zeroset[ix]):
        raise ValueError("Green's function must vanish exactly at x")
    col = np.array(G.column(iy))
    gyy = col[iy]
    S = np.pi * col / gyy
    S[iy] = np.pi
    return MWTestFunction(S, dirichlet_energy(graph, S), float(gyy), ix, iy)
