import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfflab.harmonic import (SingularSystemError, dirichlet_energy, green, green_slope_fit,
                             harmonic_extension, hitting_probs, mw_test_function,
                             rooted_torus_covariance, rooted_torus_green_diag)
from gfflab.lattice import build_box, build_torus, build_window


def dense_green(n, mass=0.0):
    """Independent oracle: invert the hand-built interior matrix of Lambda_n."""
    side = 2 * n - 1
    idx = {(i, j): a for a, (i, j) in enumerate((i, j) for i in range(-n + 1, n) for j in range(-n + 1, n))}
    Q = np.zeros((side * side, side * side))
    for (i, j), a in idx.items():
        Q[a, a] = 4 + mass ** 2
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            b = idx.get((i + d[0], j + d[1]))
            if b is not None:
                Q[a, b] = -1
    return idx, np.linalg.inv(Q)


def random_walk_hits(graph, target, start, walks, rng):
    """Simulate simple random walks from ``start`` until they hit ``target``."""
    steps = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)])
    pos = np.tile(graph.coords[graph.index(start)], (walks, 1))
    hit = np.full(walks, -1)
    alive = np.ones(walks, dtype=bool)
    tgt = set(map(int, np.flatnonzero(target)))
    while alive.any():
        a = np.flatnonzero(alive)
        pos[a] += steps[rng.integers(0, 4, len(a))]
        for w in a:
            i = graph.index(pos[w])
            if i in tgt:
                hit[w] = i
                alive[w] = False
    return hit


def test_green_lambda1_center():
    assert abs(green(build_box(1))((0, 0), (0, 0)) - 0.25) < 1e-10


@pytest.mark.parametrize("mass", [0.0, 0.3])
def test_green_matches_dense_inverse(mass):
    g = build_box(4)
    G = green(g, mass=mass)
    idx, inv = dense_green(4, mass)
    for (x, a) in list(idx.items())[::7]:
        for (y, b) in list(idx.items())[::5]:
            assert abs(G(x, y) - inv[a, b]) < 1e-12


def test_green_symmetric_and_residual():
    g = build_box(6)
    G = green(g, mass=0.1)
    M = G.matrix()
    assert np.abs(M - M.T).max() < 1e-10
    for y in [(0, 0), (3, -2), (5, 5)]:
        assert G.residual(y) < 1e-8
    assert G((6, 0), (0, 0)) == 0.0


def test_green_singular():
    with pytest.raises(SingularSystemError):
        green(build_torus(5))
    green(build_torus(5), mass=0.5)


def test_green_krylov_matches_direct():
    g = build_box(10)
    a = green(g, method="direct").column((2, 3))
    b = green(g, method="krylov").column((2, 3))
    assert np.abs(a - b).max() < 1e-8


def test_rooted_torus_spectral_vs_solver():
    L = 9
    g = build_torus(L, root=[(0, 0)])
    G = green(g)
    diag = rooted_torus_green_diag(L)
    for v in [(1, 0), (3, 4), (8, 8)]:
        assert abs(G(v, v) - diag[v]) < 1e-10
    assert abs(G((2, 1), (5, 7)) - rooted_torus_covariance(L, (2, 1), (5, 7))) < 1e-10


def test_green_slope_moderate_window():
    fit = green_slope_fit(256)
    assert abs(fit.slope * math.pi - 1) < 0.02
    assert fit.r2 > 0.99


def test_harmonic_extension_constant():
    g = build_box(5)
    A = g.mask([(0, 0), (2, 1)])
    h = harmonic_extension(g, A, np.full(g.n_sites, 2.5))
    assert np.allclose(h.values, 2.5, atol=1e-12)


def test_harmonic_extension_lambda1():
    g = build_box(1)
    rng = np.random.default_rng(1)
    vals = rng.normal(size=g.n_sites)
    h = harmonic_extension(g, np.zeros(g.n_sites, dtype=bool), vals)
    nb = [g.index(s) for s in [(1, 0), (-1, 0), (0, 1), (0, -1)]]
    assert abs(h.values[g.index((0, 0))] - vals[nb].mean()) < 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_harmonic_extension_linear_and_max_principle(seed):
    rng = np.random.default_rng(seed)
    g = build_box(4)
    A = rng.random(g.n_sites) < 0.15
    u, v = rng.normal(size=(2, g.n_sites))
    a, b = rng.normal(size=2)
    hu = harmonic_extension(g, A, u).values
    hv = harmonic_extension(g, A, v).values
    huv = harmonic_extension(g, A, a * u + b * v).values
    assert np.abs(huv - (a * hu + b * hv)).max() < 1e-10
    pres = A | g.boundary
    assert hu.min() >= u[pres].min() - 1e-12 and hu.max() <= u[pres].max() + 1e-12


def test_harmonic_extension_is_harmonic_and_vectorial():
    g = build_box(5)
    rng = np.random.default_rng(2)
    A = g.mask([(1, 1), (-2, 3)])
    vals = rng.normal(size=(g.n_sites, 3))
    h = harmonic_extension(g, A, vals)
    free = ~(A | g.boundary)
    for i in np.flatnonzero(free):
        assert np.allclose(h.values[i], h.values[g.neighbors(i)].mean(axis=0), atol=1e-12)
    for c in range(3):
        assert np.allclose(harmonic_extension(g, A, vals[:, c]).values, h.values[:, c])


def test_harmonic_extension_equals_hitting_average():
    g = build_box(4)
    A = g.mask([(1, 0), (-1, -2)])
    vals = np.random.default_rng(3).normal(size=g.n_sites)
    h = harmonic_extension(g, A, vals)
    p = hitting_probs(g, A | g.boundary, (0, 1))
    assert abs(h.values[g.index((0, 1))] - sum(q * vals[s] for s, q in p.items())) < 1e-12


def test_hitting_probs_trivial_cases():
    g = build_box(3)
    assert hitting_probs(g, g.boundary, (3, 0)) == {g.index((3, 0)): 1.0}
    ring = g.mask([(1, 0), (-1, 0), (0, 1), (0, -1)])
    p = hitting_probs(g, ring, (0, 0))
    assert len(p) == 4 and all(abs(q - 0.25) < 1e-12 for q in p.values())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_hitting_probs_stochastic(seed):
    rng = np.random.default_rng(seed)
    g = build_box(4)
    tgt = g.boundary | (rng.random(g.n_sites) < 0.1)
    free = np.flatnonzero(~tgt)
    if len(free) == 0:
        return
    p = hitting_probs(g, tgt, int(rng.choice(free)))
    assert abs(sum(p.values()) - 1) < 1e-10
    assert min(p.values()) >= 0


def test_hitting_probs_random_walk_oracle():
    g = build_box(3)
    tgt = g.boundary | g.mask([(1, 1)])
    p = hitting_probs(g, tgt, (0, 0))
    walks = 100_000
    hits = random_walk_hits(g, tgt, (0, 0), walks, np.random.default_rng(7))
    freq = np.bincount(hits, minlength=g.n_sites) / walks
    for s, q in p.items():
        se = math.sqrt(q * (1 - q) / walks)
        assert abs(freq[s] - q) < 3 * se + 1e-12
    # extension at the start = hitting average of boundary data
    vals = np.random.default_rng(8).normal(size=g.n_sites)
    h = harmonic_extension(g, g.mask([(1, 1)]), vals).values[g.index((0, 0))]
    samp = vals[hits]
    assert abs(samp.mean() - h) < 3 * samp.std() / math.sqrt(walks)


def test_mw_identity_small():
    g = build_box(6)
    S = mw_test_function(g, (0, 0), (3, 2))
    assert S.S[S.x] == 0.0 and S.S[S.y] == math.pi
    assert abs(S.energy - math.pi ** 2 / S.green_yy) < 1e-8
    assert abs(S.energy - dirichlet_energy(g, S.S)) < 1e-12


def test_mw_requires_distinct_sites():
    with pytest.raises(ValueError):
        mw_test_function(build_box(3), (1, 1), (1, 1))


def test_mw_energy_decreases_with_separation():
    g = build_box(64)
    from gfflab.harmonic import GreenFn
    G = GreenFn(g, zeroset=[g.index((0, 0))])
    energies = [mw_test_function(g, (0, 0), (r, 0), G).energy for r in (1, 2, 4, 8, 16, 32)]
    assert all(a > b for a, b in zip(energies, energies[1:]))


def test_green_csv(tmp_path):
    g = build_window(1)
    G = green(g, mass=1.0)
    p = tmp_path / "g.csv"
    G.to_csv(p, pairs=[(0, 0), (0, 4)])
    rows = p.read_text().splitlines()
    assert rows[0] == "x1,x2,y1,y2,G" and len(rows) == 3
    assert abs(float(rows[2].split(",")[-1]) - G(0, 4)) < 1e-15
