"""O(N) spin models with per-edge conductances.

Boltzmann weight ``exp(sum_e C_e theta(u) . theta(v))`` on a SiteGraph.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numba as nb
import numpy as np
from scipy import integrate

from ._kernels import _find
from .gff import VectorField, batch_stderr
from .harmonic import torus_eigenvalues
from .lattice import SiteGraph
from .rng import make_rng


@dataclass
class SpinConfig:
    graph: SiteGraph
    theta: np.ndarray

    @property
    def N(self) -> int:
        return self.theta.shape[1]

    def check(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.theta, axis=1) - 1) <= tol))


@dataclass
class ConductanceField:
    graph: SiteGraph
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape == ():
            v = np.full(self.graph.n_edges, float(v))
        if v.shape != (self.graph.n_edges,):
            raise ValueError("one conductance per edge required")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("conductances must be finite and nonnegative")
        self.values = v


def _conductances(graph, c) -> np.ndarray:
    if isinstance(c, ConductanceField):
        return c.values
    return ConductanceField(graph, c).values


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _uniform_sphere(N, rng, out):
    s = 0.0
    for i in range(N):
        out[i] = rng.standard_normal()
        s += out[i] * out[i]
    s = math.sqrt(s)
    for i in range(N):
        out[i] /= s


@nb.njit(cache=True)
def _vmf_cosine(kappa, N, rng):
    """Cosine w between a von Mises-Fisher draw on S^{N-1} and its mean direction."""
    if kappa < 1e-12:
        if N == 3:
            return 2.0 * rng.random() - 1.0
        z = rng.beta(0.5 * (N - 1), 0.5 * (N - 1))
        return 1.0 - 2.0 * z
    if N == 3:
        u = rng.random()
        return 1.0 + math.log(u + (1.0 - u) * math.exp(-2.0 * kappa)) / kappa
    d = N - 1.0
    b = d / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + d * d))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d * math.log(1.0 - x0 * x0)
    while True:
        z = rng.beta(0.5 * d, 0.5 * d)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        if kappa * w + d * math.log(1.0 - x0 * w) - c >= math.log(rng.random()):
            return w


@nb.njit(cache=True)
def _heatbath(nbr_ptr, nbr, nbr_edge, cond, theta, nsweeps, rng):
    n, N = theta.shape
    h = np.empty(N)
    v = np.empty(N)
    for _ in range(nsweeps):
        for x in range(n):
            for i in range(N):
                h[i] = 0.0
            for p in range(nbr_ptr[x], nbr_ptr[x + 1]):
                c = cond[nbr_edge[p]]
                if c != 0.0:
                    y = nbr[p]
                    for i in range(N):
                        h[i] += c * theta[y, i]
            kappa = 0.0
            for i in range(N):
                kappa += h[i] * h[i]
            kappa = math.sqrt(kappa)
            if N == 1:
                theta[x, 0] = 1.0 if rng.random() * (1.0 + math.exp(-2.0 * h[0])) < 1.0 else -1.0
                continue
            if kappa < 1e-300:
                _uniform_sphere(N, rng, v)
                for i in range(N):
                    theta[x, i] = v[i]
                continue
            for i in range(N):
                h[i] /= kappa
            w = _vmf_cosine(kappa, N, rng)
            # tangent direction
            while True:
                dot = 0.0
                for i in range(N):
                    v[i] = rng.standard_normal()
                    dot += v[i] * h[i]
                s = 0.0
                for i in range(N):
                    v[i] -= dot * h[i]
                    s += v[i] * v[i]
                if s > 1e-24:
                    break
            s = math.sqrt(s)
            r = math.sqrt(max(0.0, 1.0 - w * w))
            nrm = 0.0
            for i in range(N):
                theta[x, i] = w * h[i] + r * v[i] / s
                nrm += theta[x, i] * theta[x, i]
            nrm = math.sqrt(nrm)
            for i in range(N):
                theta[x, i] /= nrm


@nb.njit(cache=True)
def _wolff(nbr_ptr, nbr, nbr_edge, cond, theta, nclusters, rng, stamp):
    """Grow and flip ``nclusters`` reflection clusters; returns the number of flipped sites."""
    n, N = theta.shape
    r = np.empty(N)
    stack = np.empty(n, dtype=np.int64)
    total = 0
    for _ in range(nclusters):
        stamp[0] += 1
        tag = stamp[0]
        _uniform_sphere(N, rng, r)
        x0 = int(rng.random() * n)
        top = 0
        stack[top] = x0
        top += 1
        # site marks live after the counter slot
        stamp[1 + x0] = tag
        while top > 0:
            top -= 1
            x = stack[top]
            px = 0.0
            for i in range(N):
                px += r[i] * theta[x, i]
            for i in range(N):
                theta[x, i] -= 2.0 * px * r[i]
            total += 1
            for p in range(nbr_ptr[x], nbr_ptr[x + 1]):
                y = nbr[p]
                if stamp[1 + y] == tag:
                    continue
                c = cond[nbr_edge[p]]
                if c == 0.0:
                    continue
                py = 0.0
                for i in range(N):
                    py += r[i] * theta[y, i]
                arg = -2.0 * c * px * py
                if arg >= 0.0:
                    continue
                if rng.random() < -math.expm1(arg):
                    stamp[1 + y] = tag
                    stack[top] = y
                    top += 1
    return total


@nb.njit(cache=True)
def _renormalize(theta):
    n, N = theta.shape
    for x in range(n):
        s = 0.0
        for i in range(N):
            s += theta[x, i] * theta[x, i]
        s = math.sqrt(s)
        for i in range(N):
            theta[x, i] /= s


class SpinChain:
    """Markov chain for the O(N) model with conductances; ``theta`` is updated in place."""

    def __init__(self, graph: SiteGraph, N: int, conductances, algorithm: str = "wolff",
                 seed=None, init=None, clusters_per_sweep: Optional[int] = None):
        if algorithm not in ("heatbath", "wolff"):
            raise ValueError(f"unknown algorithm {algorithm!r}")
        self.graph = graph
        self.N = int(N)
        self.cond = _conductances(graph, conductances)
        self.algorithm = algorithm
        self.rng = make_rng(seed)
        if init is None:
            th = self.rng.standard_normal((graph.n_sites, N))
            th /= np.linalg.norm(th, axis=1, keepdims=True)
        else:
            th = np.array(init, dtype=float).reshape(graph.n_sites, N)
        self.theta = th
        self._stamp = np.zeros(graph.n_sites + 1, dtype=np.int64)
        self.clusters_per_sweep = clusters_per_sweep
        self.cluster_sites = 0
        self.clusters = 0
        self.sweeps_done = 0

    def _pilot(self) -> None:
        # Clusters per sweep must not depend on the trajectory being measured, so it
        # is fixed once from a pilot run (about 10 lattice volumes of flips).
        g = self.graph
        n = g.n_sites
        sites = clusters = 0
        while sites < 10 * n and clusters < 100 * n:
            sites += _wolff(g.nbr_ptr, g.nbr, g.nbr_edge, self.cond, self.theta, 16, self.rng,
                            self._stamp)
            clusters += 16
        self.clusters_per_sweep = max(1, int(math.ceil(n * clusters / sites)))

    def sweep(self, n: int = 1) -> None:
        g = self.graph
        if self.algorithm == "heatbath":
            _heatbath(g.nbr_ptr, g.nbr, g.nbr_edge, self.cond, self.theta, n, self.rng)
        else:
            if self.clusters_per_sweep is None:
                self._pilot()
            c = n * self.clusters_per_sweep
            self.cluster_sites += _wolff(g.nbr_ptr, g.nbr, g.nbr_edge, self.cond, self.theta, c,
                                         self.rng, self._stamp)
            self.clusters += c
        self.sweeps_done += n
        if self.sweeps_done % 64 < n:
            _renormalize(self.theta)

    def config(self) -> SpinConfig:
        return SpinConfig(self.graph, self.theta.copy())


def mcmc_spin(graph: SiteGraph, N: int, conductances, sweeps: int, algorithm: str = "wolff",
              seed=None, burn_in: int = 100, thin: int = 1, init=None,
              clusters_per_sweep: Optional[int] = None) -> Iterator[SpinConfig]:
    """Yield ``sweeps`` configurations, ``thin`` sweeps apart, after ``burn_in`` sweeps.

    A Wolff sweep is a fixed number of clusters, chosen from a pilot run so that
    it flips about one lattice volume on average.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    ch = SpinChain(graph, N, conductances, algorithm, seed, init, clusters_per_sweep)
    if burn_in:
        ch.sweep(burn_in)
    for _ in range(sweeps):
        ch.sweep(thin)
        yield ch.config()


def two_spin_correlation(N: int, c: float) -> float:
    """E[theta(x) . theta(y)] for one edge of conductance ``c``, by quadrature."""
    if N == 1:
        return math.tanh(c)
    w = lambda a: math.exp(c * (math.cos(a) - 1)) * math.sin(a) ** (N - 2)
    num = integrate.quad(lambda a: math.cos(a) * w(a), 0, math.pi, epsabs=1e-13, epsrel=1e-12)[0]
    den = integrate.quad(w, 0, math.pi, epsabs=1e-13, epsrel=1e-12)[0]
    return num / den


def integrated_autocorrelation(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with the automatic windowing rule."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    if n < 4 or np.all(x == 0):
        return 0.5
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 0.5
    for t in range(1, n):
        tau += acf[t]
        if t >= c * tau:
            break
    return float(max(tau, 0.5))


# ---------------------------------------------------------------------------
# GFF angles and projections


def angles_of_gff(field: VectorField):
    """theta = phi / |phi| and conductances |phi(u)| |phi(v)|.

    Zeroset sites carry norm 0: their conductances vanish and their angle is
    set to the first basis vector.  A zero norm anywhere else is an error.
    """
    g = field.graph
    zs = field.zeroset if field.zeroset is not None else g.boundary
    r = field.norm()
    bad = (r == 0) & ~zs
    if bad.any():
        raise ValueError(f"zero norm at non-boundary site {int(np.flatnonzero(bad)[0])}")
    th = np.zeros_like(field.values)
    ok = r > 0
    th[ok] = field.values[ok] / r[ok, None]
    th[~ok, 0] = 1.0
    e = g.edges
    return SpinConfig(g, th), ConductanceField(g, r[e[:, 0]] * r[e[:, 1]])


def project_down(config: SpinConfig, beta: float):
    """Drop the last coordinate: lower spins and conductances beta sqrt(1-tN^2) sqrt(1-tN^2)."""
    th = config.theta
    if th.shape[1] < 2:
        raise ValueError("need N >= 2")
    tN = th[:, -1]
    s = np.sqrt(np.clip(1.0 - tN ** 2, 0.0, None))
    if np.any(s == 0):
        raise ValueError("a spin sits at a pole: normalisation degenerate")
    low = th[:, :-1] / s[:, None]
    e = config.graph.edges
    return SpinConfig(config.graph, low), ConductanceField(config.graph, beta * s[e[:, 0]] * s[e[:, 1]])


def rotation_to_north(a: np.ndarray) -> np.ndarray:
    """Rotation R with R a = e_N, by the Rodrigues formula R = I + K + K^2/(1 + a.e_N)."""
    a = np.asarray(a, dtype=float)
    N = len(a)
    nvec = np.zeros(N)
    nvec[-1] = 1.0
    c = float(a @ nvec)
    if c <= -1.0 + 1e-14:
        raise ValueError("antipodal spin: rotation undefined")
    K = np.outer(nvec, a) - np.outer(a, nvec)
    return np.eye(N) + K + K @ K / (1.0 + c)


def north_root(config: SpinConfig, v) -> SpinConfig:
    """Rotate the whole configuration so that theta(v) points north (last axis)."""
    R = rotation_to_north(config.theta[config.graph.index(v)])
    th = config.theta @ R.T
    return SpinConfig(config.graph, th)


def rooted_components(theta: np.ndarray, roots: Optional[Iterable[int]] = None) -> np.ndarray:
    """For each root v, the configuration rotated so theta(v) is north.

    Returns an array (n_roots, n_sites, N).
    """
    n = theta.shape[0]
    roots = range(n) if roots is None else roots
    return np.stack([theta @ rotation_to_north(theta[v]).T for v in roots])


def rotations_to_north(a: np.ndarray) -> np.ndarray:
    """Batched :func:`rotation_to_north` for an (n, N) array of unit vectors."""
    a = np.asarray(a, dtype=float)
    n, N = a.shape
    c = a[:, -1]
    if np.any(c <= -1.0 + 1e-14):
        raise ValueError("antipodal spin: rotation undefined")
    K = np.zeros((n, N, N))
    K[:, -1, :] += a
    K[:, :, -1] -= a
    return np.eye(N) + K + np.einsum("vij,vjk->vik", K, K) / (1.0 + c)[:, None, None]


def rooted_square_moments(graph: SiteGraph, theta: np.ndarray, offsets,
                          component: int = 0) -> np.ndarray:
    """Average over roots v of (R_v theta(v + x))_component^2 for each offset x (torus only).

    ``R_v`` rotates theta(v) to the north pole, so every root contributes one
    north-rooted copy of the configuration.
    """
    if graph.period is None:
        raise ValueError("rerooting over translations needs a torus")
    row = graph.to_grid(rotations_to_north(theta)[:, component, :])
    G = graph.to_grid(theta)
    out = []
    for x in offsets:
        sh = np.roll(G, (-int(x[0]), -int(x[1])), axis=(0, 1))
        out.append(float(np.mean(np.sum(row * sh, axis=2) ** 2)))
    return np.array(out)


# ---------------------------------------------------------------------------
# gradient statistics


@dataclass
class TailResult:
    K: np.ndarray
    tail: np.ndarray
    stderr: np.ndarray
    samples: int


def edge_gradients(graph: SiteGraph, theta: np.ndarray) -> np.ndarray:
    e = graph.edges
    return theta[..., e[:, 1], :] - theta[..., e[:, 0], :]


def gradient_tail(stream, graph: SiteGraph, beta: float, K, edges=None) -> TailResult:
    """Empirical P(|grad theta(e)| >= K / sqrt(beta)), averaged over ``edges`` (all by default).

    Errors come from the spread of per-configuration edge averages.
    """
    K = np.atleast_1d(np.asarray(K, dtype=float))
    rows = []
    for cfg in stream:
        th = cfg.theta if hasattr(cfg, "theta") else np.asarray(cfg)
        d = np.linalg.norm(edge_gradients(graph, th), axis=-1)
        if edges is not None:
            d = d[np.asarray(edges)]
        rows.append([(d >= k / np.sqrt(beta)).mean() for k in K])
    rows = np.array(rows)
    m = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / np.sqrt(len(rows)) if len(rows) > 1 else np.full(len(K), np.nan)
    return TailResult(K, m, se, len(rows))


def _edge_id(graph: SiteGraph, e):
    a, b = graph.index(e[0]), graph.index(e[1])
    d = graph.displacement(np.array([a]), np.array([b]))[0]
    return a, b, d


def gradient_two_point(stream, graph: SiteGraph, e1, e2, translate: bool = True,
                       batches: int = 20):
    """Estimate E[grad theta^i(e1) grad theta^i(e2)] (averaged over components i).

    Edges are given as site pairs and must lie on one lattice line, parallel,
    at even separation.  With ``translate`` the estimate is averaged over all
    torus translations of the pair.
    Returns (estimate, stderr, per-configuration values).
    """
    a1, b1, d1 = _edge_id(graph, e1)
    a2, b2, d2 = _edge_id(graph, e2)
    if np.abs(d1).sum() != 1 or not np.array_equal(d1, d2):
        raise ValueError("edges must be parallel nearest-neighbour edges")
    sep = graph.displacement(np.array([a1]), np.array([a2]))[0]
    axis = int(np.flatnonzero(d1)[0])
    if sep[1 - axis] != 0 or sep[axis] % 2 != 0:
        raise ValueError("edges must be aligned at even separation")
    vals = []
    for cfg in stream:
        th = cfg.theta if hasattr(cfg, "theta") else np.asarray(cfg)
        if translate:
            G = graph.to_grid(th)
            s = int(np.sign(d1[axis]))
            g1 = np.roll(G, -s, axis=axis) - G
            g2 = np.roll(g1, -int(sep[axis]), axis=axis)
            vals.append(float(np.mean(g1 * g2) ))
        else:
            g1 = th[b1] - th[a1]
            g2 = th[b2] - th[a2]
            vals.append(float(np.mean(g1 * g2)))
    vals = np.array(vals)
    return float(vals.mean()), batch_stderr(vals, batches), vals


def gff_gradient_covariance(L: int, sep: int, mass: float = 0.0) -> float:
    """Exact E[grad phi(e1) grad phi(e2)] on the L-torus for horizontal edges ``sep`` apart."""
    lam = torus_eigenvalues(L, mass)
    k = 2 * np.pi * np.arange(L) / L
    num = (2 - 2 * np.cos(k))[:, None] * np.cos(k * sep)[:, None] * np.ones((1, L))
    w = np.zeros_like(lam)
    nz = lam > 1e-14
    w[nz] = 1.0 / lam[nz]
    return float(np.sum(num * w) / L ** 2)


# ---------------------------------------------------------------------------
# FK-Ising


def fk_domination_p(beta_ising: float) -> float:
    """(1 - e^{-2 beta}) / (1 + e^{-2 beta})."""
    q = math.exp(-2.0 * beta_ising)
    return (1.0 - q) / (1.0 + q)


@nb.njit(cache=True)
def _swendsen_wang(n, edges, active_edge, site_mask, sigma, p, nsweeps, rng, giant, mag):
    parent = np.arange(n)
    m = 0
    for x in range(n):
        if site_mask[x]:
            m += 1
    size = np.zeros(n, dtype=np.int64)
    flip = np.zeros(n, dtype=np.int8)
    for s in range(nsweeps):
        for x in range(n):
            parent[x] = x
        for e in range(edges.shape[0]):
            if not active_edge[e]:
                continue
            a = edges[e, 0]
            b = edges[e, 1]
            if sigma[a] == sigma[b] and rng.random() < p:
                ra = _find(parent, a)
                rb = _find(parent, b)
                if ra != rb:
                    parent[rb] = ra
        for x in range(n):
            size[x] = 0
            flip[x] = -1
        best = 0
        for x in range(n):
            if site_mask[x]:
                r = _find(parent, x)
                size[r] += 1
                if size[r] > best:
                    best = size[r]
        tot = 0
        for x in range(n):
            if site_mask[x]:
                r = _find(parent, x)
                if flip[r] < 0:
                    flip[r] = 1 if rng.random() < 0.5 else 0
                if flip[r] == 1:
                    sigma[x] = -sigma[x]
                tot += sigma[x]
        giant[s] = best / m if m else 0.0
        mag[s] = abs(tot) / m if m else 0.0


@dataclass
class FKResult:
    beta_ising: float
    p_domination: float
    giant_density: float
    giant_stderr: float
    magnetization: float
    magnetization_stderr: float
    sweeps: int
    sites: int


def fk_ising(graph: SiteGraph, beta_ising: float, seed=None, site_mask=None, sweeps: int = 200,
             burn_in: int = 50) -> FKResult:
    """Swendsen-Wang for the Ising model with free boundary on the induced subgraph of ``site_mask``.

    Reports the largest FK cluster as a fraction of the subgraph's sites.
    """
    if beta_ising <= 0:
        raise ValueError("beta_ising must be positive")
    rng = make_rng(seed)
    n = graph.n_sites
    mask = np.ones(n, dtype=bool) if site_mask is None else np.asarray(site_mask, dtype=bool)
    e = graph.edges
    act = mask[e[:, 0]] & mask[e[:, 1]]
    sigma = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int64)
    p = -math.expm1(-2.0 * beta_ising)
    tot = burn_in + sweeps
    giant = np.zeros(tot)
    mag = np.zeros(tot)
    _swendsen_wang(n, e, act, mask, sigma, p, tot, rng, giant, mag)
    g, mg = giant[burn_in:], mag[burn_in:]
    return FKResult(beta_ising, fk_domination_p(beta_ising), float(g.mean()), batch_stderr(g),
                    float(mg.mean()), batch_stderr(mg), sweeps, int(mask.sum()))
