import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gfflab.gff import (BandError, BandSpec, GaussianSampler, fluctuation_tail_probe, load_field,
                        read_header, sample_conditioned, sample_gff, sample_rooted_plane, save_field,
                        trunc_std_normal, sample_union)
from gfflab.harmonic import SingularSystemError, green, rooted_torus_green_diag
from gfflab.lattice import build_annulus, build_box, build_torus, build_window
from gfflab.rng import make_rng


def draws(graph, total, mass=0.0, method="auto", zeroset=None, seed=0, chunk=20000):
    s = GaussianSampler(graph, zeroset, mass, method)
    rng = make_rng(seed)
    return np.concatenate([s.sample(min(chunk, total - k), rng).T for k in range(0, total, chunk)])


def test_lambda1_variance():
    x = draws(build_box(1), 40000)[:, 4]
    assert x.shape == (40000,)
    se = 0.25 * math.sqrt(2 / len(x))
    assert abs(x.var() - 0.25) < 5 * se


@pytest.mark.parametrize("method, mass", [("dst", 0.0), ("sparse", 0.0), ("dst", 0.5), ("sparse", 0.5)])
def test_covariance_matches_green(method, mass):
    g = build_box(8)
    n = 100_000 if method == "dst" else 20_000
    X = draws(g, n, mass, method)
    G = green(g, mass=mass)
    rng = np.random.default_rng(1)
    sites = rng.choice(np.flatnonzero(g.interior), 12, replace=False)
    for a in sites:
        for b in sites:
            gab = G(int(a), int(b))
            emp = np.mean(X[:, a] * X[:, b])
            se = math.sqrt((G(int(a), int(a)) * G(int(b), int(b)) + gab ** 2) / n)
            assert abs(emp - gab) < 5 * se


def test_massive_torus_fft_covariance():
    g = build_torus(8)
    X = draws(g, 40000, mass=0.7)
    G = green(g, zeroset=[], mass=0.7)
    for b in [0, 1, 9, 27]:
        gab = G(0, b)
        se = math.sqrt((G(0, 0) ** 2 + gab ** 2) / len(X))
        assert abs(np.mean(X[:, 0] * X[:, b]) - gab) < 5 * se


def test_components_independent_and_zero_boundary():
    g = build_box(6)
    f = sample_gff(g, 3, seed=5)
    assert np.all(f.values[g.boundary] == 0)
    n = 20000
    V = GaussianSampler(g).sample(2 * n, make_rng(3))
    i = g.index((1, 2))
    a, b = V[i, :n], V[i, n:]
    c = np.mean(a * b)
    se = math.sqrt(np.mean(a ** 2) * np.mean(b ** 2) / n)
    assert abs(c) < 5 * se


def test_zeroset_and_singular():
    g = build_box(4)
    zs = g.boundary | g.mask([(0, 0), (1, 1)])
    f = sample_gff(g, 2, zeroset=zs, seed=9)
    assert np.all(f.values[zs] == 0)
    with pytest.raises(SingularSystemError):
        sample_gff(build_window(3), 1, seed=1)


def test_boundary_values_shift_mean_by_harmonic_extension():
    from gfflab.harmonic import harmonic_extension
    g = build_box(4)
    bv = np.zeros((g.n_sites, 1))
    bv[g.boundary, 0] = np.linspace(-1, 2, g.boundary.sum())
    h = harmonic_extension(g, np.zeros(g.n_sites, bool), bv[:, 0]).values
    a = sample_gff(g, 1, seed=11).values[:, 0]
    b = sample_gff(g, 1, seed=11, boundary_values=bv).values[:, 0]
    assert np.allclose(b - a, h, atol=1e-12)


def test_same_seed_same_field():
    g = build_box(5)
    assert np.array_equal(sample_gff(g, 2, seed=3).values, sample_gff(g, 2, seed=3).values)


def test_rooted_plane():
    f = sample_rooted_plane(16, 2, seed=1)
    assert np.all(f.values[f.graph.index((0, 0))] == 0)
    with pytest.raises(ValueError):
        sample_rooted_plane(1, 2)


def test_rooted_plane_variance_grows_logarithmically():
    n, reps = 32, 3000
    g = build_torus(2 * n + 1, root=[(0, 0)])
    X = draws(g, reps, zeroset=g.boundary)
    exact = rooted_torus_green_diag(2 * n + 1)
    for r in (2, 4, 8):
        emp = X[:, g.index((r, 0))].var()
        assert abs(emp - exact[r, 0]) < 5 * exact[r, 0] * math.sqrt(2 / reps)
    slope = (exact[8, 0] - exact[2, 0]) / math.log(4)
    assert abs(slope * math.pi - 1) < 0.05


def test_rooted_window_finite_size():
    n = 64
    a = rooted_torus_green_diag(2 * n + 1)
    b = rooted_torus_green_diag(4 * n + 1)
    for x in range(-n // 8, n // 8 + 1):
        for y in range(-n // 8, n // 8 + 1):
            if (x, y) != (0, 0) and math.hypot(x, y) <= n / 8:
                assert abs(a[x, y] / b[x, y] - 1) < 0.02


def test_snapshot_roundtrip(tmp_path):
    for g in (build_box(5), build_torus(6), build_annulus(5, 2), build_window(3)):
        f = sample_gff(g, 3, mass=0.4, zeroset=g.boundary if g.boundary.any() else None, seed=2)
        p = tmp_path / "f.bin"
        save_field(p, f)
        h = load_field(p)
        assert h.graph.sites == g.sites
        assert np.array_equal(h.values, f.values)
        assert h.mass == 0.4 and h.seed == 2
        assert read_header(p)["N"] == "3"


# truncated normals


@settings(max_examples=50, deadline=None)
@given(st.floats(-40, 40), st.floats(0.01, 30))
def test_trunc_normal_in_interval(a, w):
    rng = np.random.default_rng(0)
    for _ in range(5):
        z = trunc_std_normal(a, a + w, rng)
        assert a <= z <= a + w


@pytest.mark.parametrize("a, b", [(-1.0, 0.5), (2.0, 3.0), (8.0, np.inf), (-np.inf, -6.0), (35.0, 35.5)])
def test_trunc_normal_law(a, b):
    rng = np.random.default_rng(1)
    z = np.array([trunc_std_normal(a, b, rng) for _ in range(20000)])
    cdf = lambda x: stats.truncnorm.cdf(x, a, b)
    assert stats.kstest(z, cdf).pvalue > 1e-3


def test_union_draw_weights():
    rng = np.random.default_rng(2)
    lo, hi = np.array([-np.inf, 1.0]), np.array([-1.0, np.inf])
    z = np.array([sample_union(0.3, 1.0, lo, hi, 2, rng) for _ in range(20000)])
    assert np.all(np.abs(z) >= 1.0)
    p_right = stats.norm.sf(1.0, 0.3) / (stats.norm.sf(1.0, 0.3) + stats.norm.cdf(-1.0, 0.3))
    se = math.sqrt(p_right * (1 - p_right) / len(z))
    assert abs(np.mean(z > 0) - p_right) < 4 * se


# conditioned fields


def test_unconditioned_bands_match_exact_marginal():
    g = build_box(3)
    bands = BandSpec.interval(g)
    v = g.index((0, 0))
    x = np.array([f.values[v, 0] for f in sample_conditioned(g, bands, 10000, seed=4, thin=5)])
    sd = math.sqrt(green(g)(v, v))
    assert stats.kstest(x, "norm", args=(0, sd)).statistic < 0.02


def test_point_bands_give_zero_field():
    g = build_box(2)
    for f in sample_conditioned(g, BandSpec.interval(g, 0.0, 0.0), 5, seed=1, burn_in=2):
        assert np.all(f.values == 0)


def test_conditioned_respects_bands_and_fkg():
    g = build_box(2)
    bands = BandSpec.interval(g, -1.0, 1.0)
    i, j = g.index((0, 0)), g.index((1, 0))
    X = np.array([f.values[:, 0] for f in sample_conditioned(g, bands, 20000, seed=6)])
    assert np.all(np.abs(X) <= 1.0)
    prod = (X[:, i] - X[:, i].mean()) * (X[:, j] - X[:, j].mean())
    batches = np.array([b.mean() for b in np.array_split(prod, 40)])
    cov, se = batches.mean(), batches.std(ddof=1) / math.sqrt(40)
    assert cov >= -3 * se
    assert cov > 0


def test_bandspec_errors():
    g = build_box(2)
    with pytest.raises(BandError):
        BandSpec.from_sets(g, {(0, 0): [(1.0, 0.5)]})
    with pytest.raises(BandError):
        BandSpec.interval(g, pin_boundary=False)
    b = BandSpec.from_sets(g, {(0, 0): [(-3, -2), (2, 3)], (1, 0): [(0.5, 0.5)]},
                           pins={(p, q): 0.0 for p, q in g.coords[g.boundary]})
    assert b.pinned[g.index((1, 0))] and b.pin_value[g.index((1, 0))] == 0.5
    for f in sample_conditioned(g, b, 50, seed=2, burn_in=10):
        assert 2 <= abs(f.values[g.index((0, 0)), 0]) <= 3


def test_probe_hard_bound_inside_band():
    g = build_box(4)
    r = fluctuation_tail_probe(g, g.interior, [], 1.0, (0, 0), p=1, N=2, sweeps=500, seed=3)
    assert np.all(r.trace <= 1.0 + 1e-12)
    assert r.estimate <= 2.0


def test_probe_growth_in_distance():
    g = build_box(20)
    core = [tuple(c) for c in build_box(2).coords]
    a, p = 1.0, 1
    e2 = fluctuation_tail_probe(g, core, [], a, (4, 0), p=p, N=2, sweeps=3000, seed=7).estimate
    e8 = fluctuation_tail_probe(g, core, [], a, (10, 0), p=p, N=2, sweeps=3000, seed=8).estimate
    bound = ((a + math.log(10)) / (a + math.log(4))) ** (2 * p)
    assert e8 / e2 <= 2 * bound


def test_probe_outside_constraint():
    g = build_box(4)
    r = fluctuation_tail_probe(g, [], [(0, 0)], 1.0, (0, 0), sweeps=300, seed=1)
    assert np.all(r.trace > 1.0)
    with pytest.raises(BandError):
        fluctuation_tail_probe(g, [(0, 0)], [(0, 0)], 1.0, (0, 0))
    with pytest.raises(BandError):
        fluctuation_tail_probe(g, [(0, 0)], [], 0.0, (0, 0))
