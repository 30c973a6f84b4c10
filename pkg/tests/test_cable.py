import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfflab.cable import (EdgeRefinement, bridge_monte_carlo, bridge_oracle, cable_on_extension,
                          connected_pairs, discrete_bridge_avoidance, equator_dual, load_bitmap,
                          open_probability, quadrant_connection_count, refine_signs,
                          same_sign_connected, save_bitmap, soup_open_edges, soup_sign_refinement)
from gfflab.gff import GaussianSampler, sample_gff
from gfflab.harmonic import green
from gfflab.lattice import build_box, build_torus
from gfflab.loopsoup import local_time, relabel, sample_soup
from gfflab.rng import make_rng


def test_open_probability_cases():
    assert open_probability(0.0, 1.0) == 0.0
    assert open_probability(1.0, 0.0) == 0.0
    assert open_probability(1.0, -1.0) == 0.0
    assert open_probability(-2.0, -0.5) == pytest.approx(1 - math.exp(-2))
    assert open_probability(1.0, 1.0) == pytest.approx(0.864665, abs=1e-6)
    assert open_probability(1.0, 1.0, conductance=2.0) == pytest.approx(1 - math.exp(-4))


def test_bridge_oracle_matches_rule():
    o = bridge_oracle(1.0, 1.0)
    assert o["levels"][-1] == 4096
    assert abs(o["extrapolated"] - (1 - math.exp(-2))) < 1e-3
    # discrete monitoring misses crossings, so the raw values overshoot and decrease
    assert o["values"][0] > o["values"][1] > o["values"][2] > 1 - math.exp(-2)


@pytest.mark.parametrize("a, b", [(0.5, 1.5), (0.3, 0.3)])
def test_bridge_oracle_other_endpoints(a, b):
    assert abs(bridge_oracle(a, b)["extrapolated"] - (1 - math.exp(-2 * a * b))) < 1e-3


def test_bridge_transfer_vs_simulation():
    steps, samples = 32, 200_000
    p = discrete_bridge_avoidance(0.7, 1.0, steps)
    q = bridge_monte_carlo(0.7, 1.0, steps, samples, seed=3)
    assert abs(p - q) < 3 * math.sqrt(p * (1 - p) / samples)
    assert discrete_bridge_avoidance(-0.1, 1.0, steps) == 0.0


def test_refine_signs_frequency():
    g = build_torus(20)
    v = np.ones(g.n_sites)
    freq = np.mean([refine_signs(g, v, seed=s).open.mean() for s in range(50)])
    p = 1 - math.exp(-2)
    assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / (50 * g.n_edges))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_refinement_invariants(seed):
    g = build_box(5)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=g.n_sites)
    v[rng.random(g.n_sites) < 0.1] = 0
    r = refine_signs(g, v, seed=seed)
    a, b = v[g.edges[:, 0]], v[g.edges[:, 1]]
    assert not np.any(r.open & (a * b <= 0))
    # sign-flip symmetry: the open set depends only on the product of endpoint values
    assert np.array_equal(refine_signs(g, -v, seed=seed).open, r.open)
    lab = r.labels()
    assert np.all(lab[v == 0] == -1)
    e = g.edges[r.open]
    assert np.all(lab[e[:, 0]] == lab[e[:, 1]])


def test_cable_on_extension():
    g = build_torus(16)
    th = np.zeros((g.n_sites, 2))
    th[:, 0] = 1.0
    freq = np.mean([cable_on_extension(th, 1.0, seed=s, graph=g).open.mean() for s in range(40)])
    p = 1 - math.exp(-2)
    assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / (40 * g.n_edges))
    ang = np.random.default_rng(0).uniform(0, 2 * np.pi, g.n_sites)
    th = np.stack([np.cos(ang), np.sin(ang)], 1)
    r = cable_on_extension(th, 3.0, seed=1, graph=g)
    prod = th[g.edges[:, 0], 0] * th[g.edges[:, 1], 0]
    assert not np.any(r.open & (prod <= 0))
    prev = np.zeros(g.n_edges, dtype=bool)
    for beta in (0.5, 2.0, 8.0, 64.0):
        cur = cable_on_extension(th, beta, seed=5, graph=g).open
        assert np.all(cur[prev])
        prev = cur
    assert prev[prod > 0.2].all()
    with pytest.raises(ValueError):
        cable_on_extension(th, 0.0, graph=g)


def test_same_sign_connected_trivial():
    g = build_box(3)
    v = np.ones(g.n_sites)
    closed = EdgeRefinement(g, np.zeros(g.n_edges, dtype=bool), v)
    assert same_sign_connected(closed, (1, 1), (1, 1))
    assert not same_sign_connected(closed, (1, 1), (1, 2))
    opened = EdgeRefinement(g, np.ones(g.n_edges, dtype=bool), v)
    assert same_sign_connected(opened, (-3, -3), (3, 3))
    v0 = v.copy()
    v0[g.index((0, 0))] = 0
    assert not same_sign_connected(EdgeRefinement(g, np.ones(g.n_edges, bool), v0), (0, 0), (0, 0))
    pairs = np.array([[g.index((1, 1)), g.index((1, 1))], [0, 5]])
    assert connected_pairs(closed, pairs).tolist() == [True, False]


def test_two_routes_connectivity():
    """GFF + bridge rule versus loop-soup occupation clusters on Lambda_4."""
    g = build_box(4)
    reps = 6000
    pairs = np.array([[g.index((0, 0)), g.index(p)] for p in [(1, 0), (2, 0), (2, 2)]])
    s = GaussianSampler(g)
    a = np.zeros((reps, 3))
    b = np.zeros((reps, 3))
    for r in range(reps):
        rng = make_rng(r)
        phi = s.sample(1, rng)[:, 0]
        a[r] = connected_pairs(refine_signs(g, phi, seed=rng), pairs)
        b[r] = connected_pairs(soup_sign_refinement(sample_soup(g, N=1, seed=10 ** 6 + r), seed=r),
                               pairs)
    for j in range(3):
        pa, pb = a[:, j].mean(), b[:, j].mean()
        se = math.sqrt((pa * (1 - pa) + pb * (1 - pb)) / reps)
        assert abs(pa - pb) < 3 * se


def test_lupu_reconstruction_signs_and_covariance():
    g = build_box(4)
    reps = 6000
    i, j = g.index((0, 0)), g.index((2, 1))
    G = green(g)
    vv, ss, sd = np.zeros(reps), np.zeros(reps), np.zeros(reps)
    s = GaussianSampler(g)
    for r in range(reps):
        ref = soup_sign_refinement(sample_soup(g, N=1, seed=r), seed=r)
        vv[r] = ref.values[i] * ref.values[j]
        ss[r] = np.sign(ref.values[i]) * np.sign(ref.values[j])
        phi = s.sample(1, make_rng(10 ** 7 + r))[:, 0]
        sd[r] = np.sign(phi[i]) * np.sign(phi[j])
    assert abs(vv.mean() - G(i, j)) < 3 * vv.std() / math.sqrt(reps)
    assert abs(ss.mean() - sd.mean()) < 3 * math.hypot(ss.std(), sd.std()) / math.sqrt(reps)


def test_soup_open_edges_contain_crossings():
    g = build_box(4)
    soup = sample_soup(g, N=2, seed=3)
    op, L = soup_open_edges(soup, 0, seed=1)
    e = g.edges
    assert not np.any(op & ((L[e[:, 0]] == 0) | (L[e[:, 1]] == 0)))
    assert np.allclose(L, local_time(soup).values[:, 0])


def test_conditional_fkg_under_relabelling():
    g = build_box(4)
    soup = sample_soup(g, N=2, seed=11)
    i, j = g.index((0, 0)), g.index((1, 0))
    f = np.zeros(4000)
    h = np.zeros(4000)
    for r in range(4000):
        L = local_time(relabel(soup, seed=r)).values[:, 0]
        f[r], h[r] = L[i], L[j]
    prod = (f - f.mean()) * (h - h.mean())
    assert prod.mean() >= -3 * prod.std() / math.sqrt(len(prod))


def test_equator_dual_extremes():
    g = build_box(4)
    v = np.ones(g.n_sites)
    allopen = EdgeRefinement(g, np.ones(g.n_edges, dtype=bool), v)
    assert equator_dual(allopen).n_edges == 0 and equator_dual(allopen).largest_cluster() == 0
    closed = equator_dual(EdgeRefinement(g, np.zeros(g.n_edges, dtype=bool), v))
    assert closed.n_edges == g.n_edges
    planes = {p for p in closed.clusters()}
    # 10 x 10 plaquettes around the 9 x 9 box, minus the four outer corners
    assert len(planes) == 96
    assert closed.largest_cluster() == 96


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_equator_partitions_edges(seed):
    g = build_torus(6)
    rng = np.random.default_rng(seed)
    ref = refine_signs(g, rng.normal(size=g.n_sites) + 0.5, seed=seed)
    eq = equator_dual(ref)
    assert eq.n_edges + ref.open.sum() == g.n_edges
    de = eq.dual_edges()
    assert np.all((de >= 0) & (de < 6))
    # each dual edge joins two plaquettes at unit torus distance
    d = np.abs(de[:, 0] - de[:, 1])
    d = np.minimum(d, 6 - d)
    assert np.all(d.sum(axis=1) == 1)


def test_quadrant_count():
    g = build_box(4)
    v = np.ones(g.n_sites)
    assert quadrant_connection_count(EdgeRefinement(g, np.ones(g.n_edges, bool), v), 3) == 9
    assert quadrant_connection_count(EdgeRefinement(g, np.zeros(g.n_edges, bool), v), 3) == 0


def test_bitmap_roundtrip(tmp_path):
    g = build_torus(9)
    ref = refine_signs(g, np.random.default_rng(1).normal(size=g.n_sites), seed=4)
    save_bitmap(tmp_path / "e.bin", ref, 9)
    g2, bits, head = load_bitmap(tmp_path / "e.bin")
    assert np.array_equal(bits, ref.open) and head["seed"] == "4" and g2.n_edges == g.n_edges
