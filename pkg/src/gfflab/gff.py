"""Exact and conditioned samplers for N-component Gaussian free fields."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numba as nb
import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .harmonic import (SingularSystemError, _Solver, _zeroset_mask, harmonic_extension,
                       laplacian, torus_eigenvalues)
from .lattice import SiteGraph, build_annulus, build_box, build_torus
from .rng import make_rng


@dataclass
class VectorField:
    """Per-site N-vectors on a graph.

    ``values`` has shape (n_sites, N).
    """

    graph: SiteGraph
    values: np.ndarray
    mass: float = 0.0
    seed: Optional[int] = None
    zeroset: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values ** 2, axis=1))

    def sqnorm(self) -> np.ndarray:
        return np.sum(self.values ** 2, axis=1)

    def component(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def grid(self) -> np.ndarray:
        """Values on the index grid, shape (rows, cols, N)."""
        return self.graph.to_grid(self.values)


def _choose_method(graph: SiteGraph, zs: np.ndarray, mass: float) -> str:
    if graph.topology == "box" and np.array_equal(zs, graph.boundary) and graph.n_sites > 1:
        return "dst"
    if graph.topology == "torus":
        if not zs.any() and mass > 0:
            return "fft"
        if zs.sum() == 1 and mass == 0:
            return "fft-rooted"
    return "sparse"


class GaussianSampler:
    """Reusable exact sampler for one (graph, zeroset, mass) triple.

    Methods: ``dst`` (box with boundary zeroset, sine transform), ``fft``
    (massive torus), ``fft-rooted`` (massless torus pinned at one site) and
    ``sparse`` (any graph; incidence-matrix trick with a sparse LU).
    """

    def __init__(self, graph: SiteGraph, zeroset=None, mass: float = 0.0, method: str = "auto"):
        self.graph = graph
        self.mass = float(mass)
        if self.mass < 0:
            raise ValueError("mass must be nonnegative")
        self.zeroset = _zeroset_mask(graph, zeroset)
        if not self.zeroset.any() and self.mass == 0:
            raise SingularSystemError("empty zeroset with zero mass")
        self.method = _choose_method(graph, self.zeroset, self.mass) if method == "auto" else method
        getattr(self, "_setup_" + self.method.replace("-", "_"))()

    def _setup_dst(self):
        g = self.graph
        n = (g.grid.shape[0] - 1) // 2
        M = 2 * n - 1
        k = np.pi * np.arange(1, M + 1) / (M + 1)
        c = np.cos(k)
        lam = 4.0 - 2.0 * c[:, None] - 2.0 * c[None, :] + self.mass ** 2
        self._scale = 1.0 / np.sqrt(lam)
        self._inner = g.grid[1:-1, 1:-1].ravel()

    def _setup_fft(self):
        L = self.graph.period
        self._scale = 1.0 / np.sqrt(torus_eigenvalues(L, self.mass))

    def _setup_fft_rooted(self):
        L = self.graph.period
        lam = torus_eigenvalues(L)
        s = np.zeros_like(lam)
        s[lam > 1e-14] = 1.0 / np.sqrt(lam[lam > 1e-14])
        s[0, 0] = 0.0
        self._scale = s
        self._root = int(np.flatnonzero(self.zeroset)[0])

    def _setup_sparse(self):
        g = self.graph
        free = ~self.zeroset
        self._free = np.flatnonzero(free)
        pos = np.full(g.n_sites, -1, dtype=np.int64)
        pos[self._free] = np.arange(len(self._free))
        e = g.edges
        rows, cols, vals = [], [], []
        for side, sign in ((0, 1.0), (1, -1.0)):
            ok = free[e[:, side]]
            rows.append(np.flatnonzero(ok))
            cols.append(pos[e[ok, side]])
            vals.append(np.full(ok.sum(), sign))
        self._DT = sp.coo_matrix((np.concatenate(vals), (np.concatenate(cols), np.concatenate(rows))),
                                 shape=(len(self._free), len(e))).tocsr()
        Q = laplacian(g, self.mass)[self._free][:, self._free]
        self._solver = _Solver(Q)

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        """Return an (n_sites, N) array of independent components."""
        g = self.graph
        out = np.zeros((g.n_sites, N))
        if self.method == "dst":
            M = self._scale.shape[0]
            if M == 0:
                return out
            z = rng.standard_normal((M, M, N))
            f = sfft.dstn(z * self._scale[..., None], type=1, axes=(0, 1), norm="ortho")
            out[self._inner] = f.reshape(M * M, N)
        elif self.method in ("fft", "fft-rooted"):
            L = g.period
            for c0 in range(0, N, 2):
                w = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
                f = sfft.ifft2(sfft.fft2(w) * self._scale)
                out[g.grid.ravel(), c0] = f.real.ravel()
                if c0 + 1 < N:
                    out[g.grid.ravel(), c0 + 1] = f.imag.ravel()
            if self.method == "fft-rooted":
                out -= out[self._root]
        else:
            if len(self._free) == 0:
                return out
            zE = rng.standard_normal((g.n_edges, N))
            xi = self._DT @ zE
            if self.mass > 0:
                xi += self.mass * rng.standard_normal((len(self._free), N))
            out[self._free] = self._solver.solve(xi).reshape(len(self._free), N)
        return out


def sample_gff(graph: SiteGraph, N: int, mass: float = 0.0, zeroset=None, seed=None,
               method: str = "auto", boundary_values=None) -> VectorField:
    """Exact sample of the N-component (massive) GFF vanishing on ``zeroset``.

    ``zeroset`` defaults to the graph boundary.  ``boundary_values`` (per-site,
    shape (n_sites, N)) adds the harmonic extension of prescribed zeroset data.
    """
    rng = make_rng(seed)
    s = GaussianSampler(graph, zeroset, mass, method)
    vals = s.sample(N, rng)
    if boundary_values is not None:
        bv = np.asarray(boundary_values, dtype=float).reshape(graph.n_sites, N)
        h = _extend_from(graph, s.zeroset, bv, mass)
        vals = vals + h
    sd = seed if isinstance(seed, (int, np.integer)) else None
    return VectorField(graph, vals, float(mass), sd, s.zeroset)


def _extend_from(graph, zs, bv, mass):
    if mass == 0.0 and graph.boundary.any() and not (graph.boundary & ~zs).any():
        return harmonic_extension(graph, zs, bv).values
    Q = laplacian(graph, mass)
    fi, pi = np.flatnonzero(~zs), np.flatnonzero(zs)
    out = bv.copy()
    out[fi] = _Solver(Q[fi][:, fi]).solve(-(Q[fi][:, pi] @ bv[pi])).reshape(len(fi), -1)
    return out


def sample_rooted_plane(n: int, N: int, seed=None) -> VectorField:
    """GFF pinned at the origin on a torus of side 2n+1 (coordinates mod 2n+1)."""
    if n < 2:
        raise ValueError("window size must be >= 2")
    g = build_torus(2 * n + 1, root=[(0, 0)])
    return sample_gff(g, N, 0.0, zeroset=g.boundary, seed=seed)


# ---------------------------------------------------------------------------
# snapshots

_MAGIC = "gfflab-field"


def save_field(path, fld: VectorField, extra: Optional[dict] = None) -> None:
    """Header line plus row-major little-endian float64 planes, one per component."""
    g = fld.graph
    head = {"topology": g.topology, "rows": g.grid.shape[0], "cols": g.grid.shape[1],
            "N": fld.N, "mass": repr(float(fld.mass)),
            "seed": "none" if fld.seed is None else int(fld.seed)}
    if g.topology == "annulus":
        head["inner"] = int(np.abs(g.coords[g.marks["inner"]]).max()) - 1
    head.update(extra or {})
    line = _MAGIC + " " + " ".join(f"{k}={v}" for k, v in head.items()) + "\n"
    planes = np.moveaxis(g.to_grid(fld.values), -1, 0).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(line.encode("ascii"))
        fh.write(np.ascontiguousarray(planes).tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii").strip()
    parts = line.split()
    if not parts or parts[0] != _MAGIC:
        raise ValueError(f"{path}: not a field snapshot")
    return dict(p.split("=", 1) for p in parts[1:])


def load_field(path) -> VectorField:
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii").strip()
        raw = fh.read()
    head = dict(p.split("=", 1) for p in line.split()[1:])
    rows, cols, N = int(head["rows"]), int(head["cols"]), int(head["N"])
    topo = head["topology"]
    if topo in ("box", "plane-window"):
        g = build_box((rows - 1) // 2, topology=topo)
    elif topo == "torus":
        g = build_torus(rows)
    elif topo == "annulus":
        g = build_annulus((rows - 1) // 2, int(head["inner"]))
    else:
        raise ValueError(f"unknown topology {topo}")
    planes = np.frombuffer(raw, dtype="<f8").reshape(N, rows, cols)
    vals = g.from_grid(np.moveaxis(planes, 0, -1)).astype(np.float64)
    seed = None if head["seed"] == "none" else int(head["seed"])
    return VectorField(g, vals, float(head["mass"]), seed)


# ---------------------------------------------------------------------------
# truncated Gaussian draws

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


@nb.njit(cache=True)
def phic(x):
    """Upper Gaussian tail P(Z > x)."""
    return 0.5 * math.erfc(x / _SQRT2)


@nb.njit(cache=True)
def log_phic(x):
    if x == np.inf:
        return -np.inf
    if x < 25.0:
        return math.log(0.5 * math.erfc(x / _SQRT2))
    x2 = x * x
    return -0.5 * x2 - math.log(x) - _LOG_SQRT_2PI + math.log1p(-1.0 / x2 + 3.0 / (x2 * x2))


@nb.njit(cache=True)
def ndtri_lower(p):
    """Inverse standard normal CDF for 0 < p <= 0.5, refined by one Halley step."""
    if p <= 0.0:
        return -np.inf
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    e = 0.5 * math.erfc(-x / _SQRT2) - p
    u = e * math.exp(0.5 * x * x + _LOG_SQRT_2PI)
    return x - u / (1.0 + 0.5 * x * u)


@nb.njit(cache=True)
def _log_mass(a, b):
    """log P(a < Z < b) for a < b."""
    if a >= 0.0:
        la = log_phic(a)
        lb = log_phic(b)
        if lb == -np.inf:
            return la
        return la + math.log1p(-math.exp(lb - la))
    if b <= 0.0:
        return _log_mass(-b, -a)
    m = 1.0 - phic(-a) - phic(b)
    if m <= 0.0:
        return math.log(b - a) - _LOG_SQRT_2PI
    return math.log(m)


@nb.njit(cache=True)
def _tail_rejection(a, b, rng):
    if b - a < 1.0 / a:
        while True:
            z = a + (b - a) * rng.random()
            if rng.random() < math.exp(-0.5 * (z * z - a * a)):
                return z
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.exponential(1.0 / alpha)
        if z > b:
            continue
        if rng.random() < math.exp(-0.5 * (z - alpha) ** 2):
            return z


@nb.njit(cache=True)
def trunc_std_normal(a, b, rng):
    """Standard normal conditioned on (a, b), by inverse CDF with tail-safe branches."""
    if a >= 0.0:
        if a > 30.0:
            return _tail_rejection(a, b, rng)
        ca = phic(a)
        cb = phic(b)
        c = ca - rng.random() * (ca - cb)
        if c <= 0.0:
            return _tail_rejection(a, b, rng)
        x = -ndtri_lower(c)
    elif b <= 0.0:
        return -trunc_std_normal(-b, -a, rng)
    else:
        pa = phic(-a)
        qb = phic(b)
        u = rng.random()
        p = pa + u * (1.0 - qb - pa)
        if p <= 0.5:
            x = ndtri_lower(p)
        else:
            x = -ndtri_lower(qb + (1.0 - u) * (1.0 - qb - pa))
    if x < a:
        x = a
    if x > b:
        x = b
    return x


@nb.njit(cache=True)
def sample_union(mu, sd, lo, hi, k, rng):
    """Draw N(mu, sd^2) conditioned on the union of the first k intervals [lo_j, hi_j]."""
    if k == 1:
        return mu + sd * trunc_std_normal((lo[0] - mu) / sd, (hi[0] - mu) / sd, rng)
    lm = np.empty(k)
    top = -np.inf
    for j in range(k):
        lm[j] = _log_mass((lo[j] - mu) / sd, (hi[j] - mu) / sd)
        if lm[j] > top:
            top = lm[j]
    tot = 0.0
    for j in range(k):
        lm[j] = math.exp(lm[j] - top)
        tot += lm[j]
    u = rng.random() * tot
    j = 0
    acc = lm[0]
    while acc < u and j < k - 1:
        j += 1
        acc += lm[j]
    return mu + sd * trunc_std_normal((lo[j] - mu) / sd, (hi[j] - mu) / sd, rng)


# ---------------------------------------------------------------------------
# conditioned fields


class BandError(ValueError):
    pass


@dataclass
class BandSpec:
    """Per-site admissible sets: a pin (single value) or a union of closed intervals.

    ``lo``/``hi`` have shape (n_sites, K); site x uses its first ``count[x]``
    intervals.  Pinned sites ignore the interval table.
    """

    lo: np.ndarray
    hi: np.ndarray
    count: np.ndarray
    pinned: np.ndarray
    pin_value: np.ndarray

    def __post_init__(self):
        n = len(self.count)
        for x in range(n):
            if self.pinned[x]:
                continue
            c = self.count[x]
            if c < 1 or np.any(self.lo[x, :c] >= self.hi[x, :c]):
                raise BandError(f"empty admissible set at site {x}")
        bounded = self.pinned | np.array([
            np.isfinite(self.lo[x, :max(c, 1)]).all() and np.isfinite(self.hi[x, :max(c, 1)]).all()
            for x, c in enumerate(self.count)])
        if not bounded.any():
            raise BandError("no site has a bounded admissible set")

    @classmethod
    def from_sets(cls, graph: SiteGraph, sets: dict, default=((-np.inf, np.inf),), pins=None):
        """Build from ``{site: [(lo, hi), ...]}``; ``pins`` maps sites to exact values.

        A degenerate interval ``(v, v)`` given as the only set is treated as a pin.
        """
        n = graph.n_sites
        table = [list(default) for _ in range(n)]
        pinned = np.zeros(n, dtype=bool)
        pval = np.zeros(n)
        for s, ivs in (sets or {}).items():
            i = graph.index(s)
            ivs = [tuple(map(float, iv)) for iv in ivs]
            if len(ivs) == 1 and ivs[0][0] == ivs[0][1]:
                pinned[i] = True
                pval[i] = ivs[0][0]
            table[i] = ivs
        for s, v in (pins or {}).items():
            i = graph.index(s)
            pinned[i] = True
            pval[i] = float(v)
        K = max(len(t) for t in table)
        lo = np.full((n, K), np.nan)
        hi = np.full((n, K), np.nan)
        cnt = np.zeros(n, dtype=np.int64)
        for i, t in enumerate(table):
            if pinned[i]:
                cnt[i] = 1
                lo[i, 0] = hi[i, 0] = pval[i]
                continue
            t = sorted(t)
            cnt[i] = len(t)
            for j, (a, b) in enumerate(t):
                lo[i, j], hi[i, j] = a, b
        return cls(lo, hi, cnt, pinned, pval)

    @classmethod
    def interval(cls, graph: SiteGraph, lo=-np.inf, hi=np.inf, pin_boundary: bool = True):
        """Same interval [lo, hi] at every site, boundary pinned to 0."""
        n = graph.n_sites
        pinned = graph.boundary.copy() if pin_boundary else np.zeros(n, dtype=bool)
        if lo == hi:
            return cls(np.full((n, 1), float(lo)), np.full((n, 1), float(hi)),
                       np.ones(n, dtype=np.int64), np.ones(n, dtype=bool),
                       np.where(pinned, 0.0, float(lo)))
        return cls(np.full((n, 1), float(lo)), np.full((n, 1), float(hi)),
                   np.ones(n, dtype=np.int64), pinned, np.zeros(n))

    def initial_state(self) -> np.ndarray:
        """Admissible configuration closest to 0 at every site."""
        out = np.zeros(len(self.count))
        for x in range(len(out)):
            if self.pinned[x]:
                out[x] = self.pin_value[x]
                continue
            best, bd = 0.0, np.inf
            for j in range(self.count[x]):
                v = min(max(0.0, self.lo[x, j]), self.hi[x, j])
                if abs(v) < bd:
                    best, bd = v, abs(v)
            out[x] = best
        return out


@nb.njit(cache=True)
def _gibbs_bands(nbr_ptr, nbr, diag, pinned, pin_value, lo, hi, cnt, phi, nsweeps, rng):
    n = phi.shape[0]
    for _ in range(nsweeps):
        for x in range(n):
            if pinned[x]:
                phi[x] = pin_value[x]
                continue
            acc = 0.0
            for p in range(nbr_ptr[x], nbr_ptr[x + 1]):
                acc += phi[nbr[p]]
            mu = acc / diag[x]
            sd = 1.0 / math.sqrt(diag[x])
            phi[x] = sample_union(mu, sd, lo[x], hi[x], cnt[x], rng)


def sample_conditioned(graph: SiteGraph, bands: BandSpec, sweeps: int, seed=None, burn_in: int = 100,
                       thin: int = 1, mass: float = 0.0, init=None) -> Iterator[VectorField]:
    """Single-site Gibbs chain for the scalar GFF conditioned on ``bands``.

    Yields ``sweeps`` states, ``thin`` full sweeps apart, after ``burn_in`` sweeps.
    """
    if sweeps < 1 or thin < 1 or burn_in < 0:
        raise ValueError("sweeps and thin must be positive")
    rng = make_rng(seed)
    diag = graph.degree.astype(float) + mass ** 2
    phi = bands.initial_state() if init is None else np.array(init, dtype=float).ravel()
    args = (graph.nbr_ptr, graph.nbr, diag, bands.pinned, bands.pin_value, bands.lo, bands.hi,
            bands.count)
    if burn_in:
        _gibbs_bands(*args, phi, burn_in, rng)
    for _ in range(sweeps):
        _gibbs_bands(*args, phi, thin, rng)
        yield VectorField(graph, phi[:, None].copy(), mass)


FREE, PINNED, NORM_LE, NORM_GT = 0, 1, 2, 3


@nb.njit(cache=True)
def _gibbs_norm(nbr_ptr, nbr, diag, kind, level, phi, nsweeps, rng):
    n, N = phi.shape
    lo = np.empty(2)
    hi = np.empty(2)
    for _ in range(nsweeps):
        for x in range(n):
            if kind[x] == PINNED:
                continue
            sd = 1.0 / math.sqrt(diag[x])
            for i in range(N):
                acc = 0.0
                for p in range(nbr_ptr[x], nbr_ptr[x + 1]):
                    acc += phi[nbr[p], i]
                mu = acc / diag[x]
                if kind[x] == FREE:
                    phi[x, i] = mu + sd * rng.standard_normal()
                    continue
                rest = 0.0
                for j in range(N):
                    if j != i:
                        rest += phi[x, j] * phi[x, j]
                room = level[x] * level[x] - rest
                if kind[x] == NORM_LE:
                    w = math.sqrt(max(room, 0.0))
                    lo[0] = -w
                    hi[0] = w
                    phi[x, i] = sample_union(mu, sd, lo, hi, 1, rng)
                elif room < 0.0:
                    phi[x, i] = mu + sd * rng.standard_normal()
                else:
                    w = math.sqrt(room)
                    lo[0] = -np.inf
                    hi[0] = -w
                    lo[1] = w
                    hi[1] = np.inf
                    phi[x, i] = sample_union(mu, sd, lo, hi, 2, rng)


@dataclass
class ProbeResult:
    estimate: float
    stderr: float
    samples: int
    trace: np.ndarray = field(repr=False, default=None)


def batch_stderr(x: np.ndarray, batches: int = 20) -> float:
    x = np.asarray(x, dtype=float)
    b = min(batches, len(x))
    if b < 2:
        return float("nan")
    m = np.array([c.mean() for c in np.array_split(x, b)])
    return float(m.std(ddof=1) / np.sqrt(b))


def fluctuation_tail_probe(graph: SiteGraph, le_sites, gt_sites, a: float, v, p: float = 1.0,
                           N: int = 2, sweeps: int = 2000, burn_in: int = 200, seed=None,
                           mass: float = 0.0) -> ProbeResult:
    """Estimate E[ |phi(v)|^{2p} | |phi| <= a on V_le, |phi| > a on V_gt ].

    The graph boundary is pinned to 0; sites in neither set are unconstrained.
    """
    if a <= 0:
        raise BandError("level must be positive: a point conditioning has probability zero")
    le = graph.mask(le_sites) if not (isinstance(le_sites, np.ndarray) and le_sites.dtype == bool) \
        else le_sites
    gt = graph.mask(gt_sites) if not (isinstance(gt_sites, np.ndarray) and gt_sites.dtype == bool) \
        else gt_sites
    if (le & gt).any():
        raise BandError("V_le and V_gt overlap")
    if ((le | gt) & graph.boundary).any():
        raise BandError("constraints on pinned boundary sites")
    kind = np.full(graph.n_sites, FREE, dtype=np.int64)
    kind[le] = NORM_LE
    kind[gt] = NORM_GT
    kind[graph.boundary] = PINNED
    level = np.full(graph.n_sites, float(a))
    phi = np.zeros((graph.n_sites, N))
    phi[gt, 0] = 1.5 * a + 1.0
    rng = make_rng(seed)
    diag = graph.degree.astype(float) + mass ** 2
    iv = graph.index(v)
    _gibbs_norm(graph.nbr_ptr, graph.nbr, diag, kind, level, phi, burn_in, rng)
    trace = np.empty(sweeps)
    for s in range(sweeps):
        _gibbs_norm(graph.nbr_ptr, graph.nbr, diag, kind, level, phi, 1, rng)
        trace[s] = np.sum(phi[iv] ** 2) ** p
    return ProbeResult(float(trace.mean()), batch_stderr(trace), sweeps, trace)
