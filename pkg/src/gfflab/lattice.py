"""Square-lattice geometries: boxes, tori, annuli and tessellations.

Every graph is stored on a rectangular index grid.  Sites are numbered in
row-major order of the grid (first coordinate slowest), which is also the
vertex ordering used by the loop-soup sampler.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

TOPOLOGIES = ("box", "torus", "plane-window", "annulus")
METRICS = ("l1", "linf", "l2")


class GeometryError(ValueError):
    """Raised for impossible or degenerate geometries."""


@dataclass(frozen=True, eq=False)
class SiteGraph:
    """Finite subgraph of Z^2 (or a torus) with unit conductances.

    Attributes
    ----------
    coords : (n_sites, 2) int array
        Integer coordinates of the sites.  On a torus they lie in [0, L).
    edges : (n_edges, 2) int array
        Index pairs ``i < j`` of nearest-neighbour sites.
    boundary : (n_sites,) bool array
        Designated boundary set (the default zeroset of samplers).
    topology : str
        One of ``box``, ``torus``, ``plane-window``, ``annulus``.
    origin : (2,) int array
        Coordinate of grid cell ``[0, 0]``.
    grid : 2d int array
        Site index of every grid cell, ``-1`` for non-members.
    period : int or None
        Side length for tori.
    marks : dict
        Named boolean site masks (e.g. inner and outer rings of an annulus).
    """

    coords: np.ndarray
    edges: np.ndarray
    boundary: np.ndarray
    topology: str
    origin: np.ndarray
    grid: np.ndarray
    period: Optional[int] = None
    marks: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.coords, self.edges, self.boundary, self.grid):
            a.setflags(write=False)
        indptr, nbr, eid = _csr_neighbors(len(self.coords), self.edges)
        object.__setattr__(self, "nbr_ptr", indptr)
        object.__setattr__(self, "nbr", nbr)
        object.__setattr__(self, "nbr_edge", eid)

    @property
    def n_sites(self) -> int:
        return len(self.coords)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.nbr_ptr)

    @property
    def sites(self) -> set:
        return {(int(x), int(y)) for x, y in self.coords}

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    def neighbors(self, i: int) -> np.ndarray:
        return self.nbr[self.nbr_ptr[i]:self.nbr_ptr[i + 1]]

    def index(self, site) -> int:
        """Index of a site given as an int index or a coordinate pair."""
        if isinstance(site, (int, np.integer)):
            if not 0 <= site < self.n_sites:
                raise IndexError(f"site index {site} out of range")
            return int(site)
        x, y = int(site[0]), int(site[1])
        if self.period is not None:
            x %= self.period
            y %= self.period
        i, j = x - self.origin[0], y - self.origin[1]
        if 0 <= i < self.grid.shape[0] and 0 <= j < self.grid.shape[1]:
            k = self.grid[i, j]
            if k >= 0:
                return int(k)
        raise KeyError(f"site {(x, y)} is not a member")

    def indices(self, sites) -> np.ndarray:
        """Vector version of :meth:`index`; accepts masks, index arrays or coordinate lists."""
        if sites is None:
            return np.zeros(0, dtype=np.int64)
        if isinstance(sites, np.ndarray) and sites.dtype == bool:
            if sites.shape != (self.n_sites,):
                raise ValueError("mask has wrong shape")
            return np.flatnonzero(sites)
        if isinstance(sites, np.ndarray) and sites.ndim == 1:
            return sites.astype(np.int64)
        return np.array([self.index(s) for s in sites], dtype=np.int64)

    def mask(self, sites) -> np.ndarray:
        m = np.zeros(self.n_sites, dtype=bool)
        m[self.indices(sites)] = True
        return m

    def contains(self, site) -> bool:
        try:
            self.index(site)
        except KeyError:
            return False
        return True

    def to_grid(self, values: np.ndarray, fill=0.0) -> np.ndarray:
        """Scatter per-site values onto the index grid (extra trailing axes kept)."""
        values = np.asarray(values)
        out = np.full(self.grid.shape + values.shape[1:], fill, dtype=values.dtype)
        m = self.grid >= 0
        out[m] = values[self.grid[m]]
        return out

    def from_grid(self, arr: np.ndarray) -> np.ndarray:
        m = self.grid >= 0
        out = np.empty((self.n_sites,) + arr.shape[2:], dtype=arr.dtype)
        out[self.grid[m]] = arr[m]
        return out

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Coordinate differences ``coords[b] - coords[a]``, wrapped on a torus."""
        d = self.coords[b] - self.coords[a]
        if self.period is not None:
            L = self.period
            d = (d + L // 2) % L - L // 2
        return d

    def distance(self, a, b, metric: str = "l1") -> np.ndarray:
        d = np.abs(self.displacement(np.asarray(a), np.asarray(b)))
        return _norm(d, metric)


def _norm(d: np.ndarray, metric: str):
    if metric == "l1":
        return d.sum(axis=-1)
    if metric == "linf":
        return d.max(axis=-1)
    if metric == "l2":
        return np.sqrt((d.astype(float) ** 2).sum(axis=-1))
    raise ValueError(f"unknown metric {metric!r}")


def _csr_neighbors(n: int, edges: np.ndarray):
    if len(edges) == 0:
        z = np.zeros(0, dtype=np.int64)
        return np.zeros(n + 1, dtype=np.int64), z, z
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    eid = np.tile(np.arange(len(edges)), 2)
    order = np.lexsort((dst, src))
    src, dst, eid = src[order], dst[order], eid[order]
    counts = np.bincount(src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, dst.astype(np.int64), eid.astype(np.int64)


def _from_member_grid(member: np.ndarray, origin, topology, boundary_fn, period=None, marks_fn=None):
    grid = np.full(member.shape, -1, dtype=np.int64)
    idx = np.flatnonzero(member.ravel())
    grid.ravel()[idx] = np.arange(len(idx))
    ii, jj = np.nonzero(member)
    coords = np.stack([ii + origin[0], jj + origin[1]], axis=1).astype(np.int64)
    edges = []
    for di, dj in ((1, 0), (0, 1)):
        if period is None:
            a = grid[: grid.shape[0] - di, : grid.shape[1] - dj]
            b = grid[di:, dj:]
        else:
            a = grid
            b = np.roll(grid, (-di, -dj), axis=(0, 1))
        ok = (a >= 0) & (b >= 0)
        e = np.stack([a[ok], b[ok]], axis=1)
        edges.append(e)
    edges = np.concatenate(edges)
    edges = np.sort(edges, axis=1)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    boundary = boundary_fn(coords)
    marks = marks_fn(coords) if marks_fn else {}
    return SiteGraph(coords, edges, boundary, topology, np.asarray(origin, dtype=np.int64),
                     grid, period, marks)


def build_box(n: int, topology: str = "box") -> SiteGraph:
    """Box Lambda_n = [-n, n]^2 with its outer ring as boundary.

    With ``topology='plane-window'`` the same sites are returned with an empty
    boundary (free boundary conditions).
    """
    n = int(n)
    if n < 0:
        raise GeometryError("box size must be nonnegative")
    if topology not in ("box", "plane-window"):
        raise GeometryError(f"build_box cannot produce topology {topology!r}")
    member = np.ones((2 * n + 1, 2 * n + 1), dtype=bool)
    if topology == "box":
        bfn = lambda c: np.abs(c).max(axis=1) == n
    else:
        bfn = lambda c: np.zeros(len(c), dtype=bool)
    return _from_member_grid(member, (-n, -n), topology, bfn)


def build_window(n: int) -> SiteGraph:
    """Plane window: Lambda_n with free boundary."""
    return build_box(n, topology="plane-window")


def build_torus(L: int, root: Optional[Iterable] = None) -> SiteGraph:
    """Torus (Z / L Z)^2 with coordinates in [0, L).

    ``root`` optionally designates a boundary (root) set, e.g. ``[(0, 0)]``.
    """
    L = int(L)
    if L < 3:
        raise GeometryError("torus side must be at least 3")
    member = np.ones((L, L), dtype=bool)
    roots = {(int(a) % L, int(b) % L) for a, b in (root or [])}

    def bfn(c):
        return np.array([(int(x), int(y)) in roots for x, y in c], dtype=bool) if roots else \
            np.zeros(len(c), dtype=bool)

    return _from_member_grid(member, (0, 0), "torus", bfn, period=L)


def build_annulus(m, n: int) -> SiteGraph:
    """Annulus Lambda_m minus Lambda_n; a non-integer ``m`` is rounded down.

    The boundary is the union of the outer ring (sup-norm m) and the inner
    ring (sup-norm n+1); they are also available as ``marks['outer']`` and
    ``marks['inner']``.
    """
    m = int(np.floor(m))
    n = int(n)
    if n < 0 or m <= n:
        raise GeometryError(f"annulus needs m > n >= 0, got m={m}, n={n}")
    r = np.arange(-m, m + 1)
    sup = np.maximum(np.abs(r)[:, None], np.abs(r)[None, :])
    member = sup > n

    def marks(c):
        s = np.abs(c).max(axis=1)
        return {"outer": s == m, "inner": s == n + 1}

    bfn = lambda c: (np.abs(c).max(axis=1) == m) | (np.abs(c).max(axis=1) == n + 1)
    return _from_member_grid(member, (-m, -m), "annulus", bfn, marks_fn=marks)


def ball_offsets(k: int, metric: str = "l1") -> np.ndarray:
    """All nonzero integer offsets of norm at most ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    r = np.arange(-k, k + 1)
    d = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    d = d[np.any(d != 0, axis=1)]
    keep = _norm(np.abs(d), metric) <= k
    return d[keep].astype(np.int64)


def kjump_ball(graph: SiteGraph, x, k: int, metric: str = "l1") -> set:
    """Member sites within distance ``k`` of ``x`` (including ``x``)."""
    i = graph.index(x)
    cx, cy = graph.coords[i]
    out = {(int(cx), int(cy))}
    for dx, dy in ball_offsets(k, metric):
        s = (cx + dx, cy + dy)
        if graph.contains(s):
            j = graph.index(s)
            out.add(tuple(int(v) for v in graph.coords[j]))
    return out


@dataclass(frozen=True, eq=False)
class Tessellation:
    """Tiling of a window by translated boxes Lambda_n.

    Cell ``c`` is centred at ``(2n+1) * cell_index[c]``.  Its annulus is the
    translate of Lambda_{floor(3n/2)} minus Lambda_n sharing the inner square
    with the cell, clipped to the window.
    """

    window: SiteGraph
    n: int
    cell_index: np.ndarray
    centers: np.ndarray
    cells: list
    annuli: list
    excluded: np.ndarray
    outer: int

    @property
    def n_cells(self) -> int:
        return len(self.cell_index)

    @property
    def side(self) -> int:
        return 2 * self.n + 1

    def cell_distance(self, a: int, b: int) -> int:
        return int(np.abs(self.cell_index[a] - self.cell_index[b]).max())

    def adjacency(self, diagonal: bool = False) -> np.ndarray:
        """Edges between cells at lattice distance 1 (or sup distance 1)."""
        lookup = {tuple(ci): c for c, ci in enumerate(self.cell_index)}
        steps = [(1, 0), (0, 1)] + ([(1, 1), (1, -1)] if diagonal else [])
        out = []
        for c, (i, j) in enumerate(self.cell_index):
            for di, dj in steps:
                d = lookup.get((i + di, j + dj))
                if d is not None:
                    out.append((c, d))
        return np.array(out, dtype=np.int64).reshape(-1, 2)


def tessellate(window: SiteGraph, n: int, root=(0, 0)) -> Tessellation:
    """Tile ``window`` with cells of side 2n+1 that fit entirely inside it.

    Cells whose cell-plus-annulus contains ``root`` are flagged as excluded.
    Pass ``root=None`` to exclude nothing.
    """
    n = int(n)
    if n < 1:
        raise GeometryError("cell size must be >= 1")
    side = 2 * n + 1
    outer = int(np.floor(3 * n / 2))
    lo = window.coords.min(axis=0)
    hi = window.coords.max(axis=0)
    imin = int(np.ceil((lo[0] + n) / side))
    imax = int(np.floor((hi[0] - n) / side))
    jmin = int(np.ceil((lo[1] + n) / side))
    jmax = int(np.floor((hi[1] - n) / side))
    cell_index, cells, annuli, excluded, centers = [], [], [], [], []
    r = np.arange(-outer, outer + 1)
    off = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    sup = np.abs(off).max(axis=1)
    for i in range(imin, imax + 1):
        for j in range(jmin, jmax + 1):
            c = np.array([i * side, j * side])
            inner = c + off[sup <= n]
            if not all(window.contains(s) for s in inner):
                continue
            ring = c + off[(sup > n) & (sup <= outer)]
            ring_idx = [window.index(s) for s in ring if window.contains(s)]
            cell_index.append((i, j))
            centers.append(c)
            cells.append(np.array([window.index(s) for s in inner], dtype=np.int64))
            annuli.append(np.array(ring_idx, dtype=np.int64))
            ex = False
            if root is not None:
                d = np.abs(np.asarray(root) - c).max()
                ex = bool(d <= outer)
            excluded.append(ex)
    if not cells:
        raise GeometryError("window smaller than one cell")
    return Tessellation(window, n, np.array(cell_index, dtype=np.int64), np.array(centers),
                        cells, annuli, np.array(excluded), outer)


def grid_positions(graph: SiteGraph) -> tuple[np.ndarray, np.ndarray]:
    """Grid row/column of every site (used by the jump kernels)."""
    gp = graph.coords - graph.origin
    return np.ascontiguousarray(gp[:, 0]), np.ascontiguousarray(gp[:, 1])
