"""Named experiments.  Each turns a validated config into a list of ResultRecords.

Work is split into fixed blocks of replicas (or independent chains) whose
random streams derive only from (seed, index), and blocks are reduced in index
order, so records do not depend on the number of workers.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np
from scipy import stats

from .cable import cable_on_extension, connected_pairs, equator_dual, quadrant_connection_count
from .exploration import phiA_samples, reach_indicators
from .gff import GaussianSampler, sample_rooted_plane
from .harmonic import rooted_torus_covariance
from .lattice import build_box, build_torus
from .loopsoup import local_time, sample_soup
from .percolation import (GmGraph, bernoulli_on_Gm, clusters, complement_tail, fit_decay,
                          outside_probability, build_Gm, tail_fit)
from .records import ConfigError, ExperimentConfig, ResultRecord
from .rng import derive_seed, replica_rng
from .spin import SpinChain, fk_domination_p, fk_ising, rooted_square_moments

BLOCK = 50


def _call(task):
    fn, args = task
    return fn(*args)


def run_tasks(tasks: list, workers: int = 1) -> list:
    """Evaluate ``(fn, args)`` tasks, returning results in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [_call(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_call, tasks))


def _blocks(total: int, size: int = BLOCK):
    return [(a, min(a + size, total)) for a in range(0, total, size)]


def _broadcast(vals, n, key):
    if len(vals) == 1:
        return vals * n
    if len(vals) != n:
        raise ConfigError(f"key {key!r} needs 1 or {n} values", key)
    return vals


def _mean_se(rows: np.ndarray):
    rows = np.asarray(rows, dtype=float)
    m = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / math.sqrt(len(rows)) if len(rows) > 1 else np.full(m.shape, np.nan)
    return m, se


def _fit(distances, p, se):
    """Decay fit, or None when too few distances have a positive estimate."""
    try:
        return fit_decay(distances, p, se)
    except ValueError:
        return None


def _fit_extra(fit) -> dict:
    if fit is None:
        return {"rate": float("nan"), "rate_stderr": float("nan"), "r2": float("nan"),
                "intercept": float("nan"), "ci": [float("nan")] * 2, "dropped": []}
    lo, hi = fit.ci()
    return {"rate": fit.rate, "rate_stderr": fit.rate_stderr, "r2": fit.r2,
            "intercept": fit.intercept, "ci": [float(lo), float(hi)], "dropped": fit.dropped}


def _rec(cfg, params, est, se, reps, t0, **extra):
    return ResultRecord(cfg.experiment, params, float(est), float(se), int(reps), cfg.seed,
                        wall_time=time.perf_counter() - t0, extra=extra)


# ---------------------------------------------------------------------------
# exit-set-scan


def _reach_block(n, N, R, k, eps, seed, metric, a, b):
    return reach_indicators(n, N, R, k, eps, range(a, b), seed, metric)


def _phiA_block(n, N, R, k, seed, metric, a, b):
    return phiA_samples(n, N, R, k, range(a, b), seed, metric)[0]


def exit_set_scan(cfg: ExperimentConfig, workers: int = 1) -> list:
    p = cfg.params
    ns = p["n"]
    reps = _broadcast(p["replicas"], len(ns), "replicas")
    out = []
    for n, nr in zip(ns, reps):
        t0 = time.perf_counter()
        sd = derive_seed(cfg.seed, n)
        if p["observable"] == "reach":
            tasks = [(_reach_block, (n, p["N"], p["R"], p["k"], p["eps"], sd, p["metric"], a, b))
                     for a, b in _blocks(nr)]
            x = np.concatenate(run_tasks(tasks, workers)).astype(float)
            est = x.mean()
            se = math.sqrt(max(est * (1 - est), 0.0) / nr)
        elif p["observable"] == "phiA":
            tasks = [(_phiA_block, (n, p["N"], p["R"], p["k"], sd, p["metric"], a, b))
                     for a, b in _blocks(nr, 10)]
            x = np.concatenate(run_tasks(tasks, workers))
            est, se = x.mean(), x.std(ddof=1) / math.sqrt(nr)
        else:
            raise ConfigError(f"unknown observable {p['observable']!r}", "observable")
        params = {"n": n, "N": p["N"], "R": p["R"], "k": p["k"], "eps": p["eps"],
                  "observable": p["observable"], "metric": p["metric"]}
        out.append(_rec(cfg, params, est, se, nr, t0))
    return out


# ---------------------------------------------------------------------------
# connectivity-decay


def _conn_block(n, N, R, k, distances, seed, metric, a, b):
    out = np.zeros((b - a, len(distances)))
    for t, r in enumerate(range(a, b)):
        f = sample_rooted_plane(n, N, replica_rng(seed, r))
        g = f.graph
        lab = clusters(g, f.norm() <= R, k, metric).labels
        l0 = lab[g.index((0, 0))]
        for j, d in enumerate(distances):
            pts = [(d, 0), (-d, 0), (0, d), (0, -d)]
            out[t, j] = np.mean([lab[g.index(q)] == l0 for q in pts])
    return out


def connectivity_decay(cfg: ExperimentConfig, workers: int = 1) -> list:
    p = cfg.params
    ds = p["distances"]
    if max(ds) > p["n"]:
        raise ConfigError("distances must not exceed n", "distances")
    t0 = time.perf_counter()
    tasks = [(_conn_block, (p["n"], p["N"], p["R"], p["k"], ds, cfg.seed, p["metric"], a, b))
             for a, b in _blocks(p["replicas"])]
    X = np.concatenate(run_tasks(tasks, workers))
    m, se = _mean_se(X)
    base = {"n": p["n"], "N": p["N"], "R": p["R"], "k": p["k"], "metric": p["metric"]}
    out = [_rec(cfg, {**base, "distance": d}, m[j], se[j], len(X), t0)
           for j, d in enumerate(ds)]
    f = _fit_extra(_fit(ds, m, se))
    out.append(_rec(cfg, {**base, "fit": "rate"}, f["rate"], f["rate_stderr"], len(X), t0,
                    r2=f["r2"], slope=-f["rate"], intercept=f["intercept"], ci=f["ci"],
                    dropped=f["dropped"]))
    return out


# ---------------------------------------------------------------------------
# isomorphism-suite


def _iso_block(n, N, seed, a, b):
    g = build_box(n)
    inner = ~g.boundary
    sampler = GaussianSampler(g)
    L = np.zeros((b - a, int(inner.sum()), N))
    P = np.zeros_like(L)
    for t, r in enumerate(range(a, b)):
        soup = sample_soup(g, N=N, seed=replica_rng(seed, r, 1), mass_cap=0.0)
        L[t] = local_time(soup).values[inner]
        P[t] = sampler.sample(N, replica_rng(seed, r, 2))[inner] ** 2
    return L, P


def _z(ma, va, na, mb, vb, nb) -> float:
    s = np.sqrt(va / na + vb / nb)
    return float(np.max(np.abs(ma - mb) / np.where(s > 0, s, np.inf)))


def _moment_z(A: np.ndarray, B: np.ndarray) -> float:
    """Largest |z| between the sample means of matching columns of A and B."""
    return _z(A.mean(axis=0), A.var(axis=0, ddof=1), len(A),
              B.mean(axis=0), B.var(axis=0, ddof=1), len(B))


def _product_stats(U: np.ndarray, V: np.ndarray):
    """Mean and sample variance of U[:, a] * V[:, b] over rows, for all (a, b)."""
    R = len(U)
    m = U.T @ V / R
    m2 = (U * U).T @ (V * V) / R
    return m, (m2 - m * m) * R / (R - 1)


def _product_z(L: np.ndarray, P: np.ndarray, i: int, j: int) -> float:
    ma, va = _product_stats(L[:, :, i], L[:, :, j])
    mb, vb = _product_stats(P[:, :, i], P[:, :, j])
    return _z(ma, va, len(L), mb, vb, len(P))


def isomorphism_suite(cfg: ExperimentConfig, workers: int = 1) -> list:
    p = cfg.params
    n, N, R = p["n"], p["N"], p["replicas"]
    t0 = time.perf_counter()
    res = run_tasks([(_iso_block, (n, N, cfg.seed, a, b)) for a, b in _blocks(R, 500)], workers)
    L = np.concatenate([r[0] for r in res])
    P = np.concatenate([r[1] for r in res])
    Ls, Ps = L.sum(axis=2), P.sum(axis=2)
    ks = np.array([stats.ks_2samp(Ls[:, x], Ps[:, x]).statistic for x in range(Ls.shape[1])])
    zmax = 0.0
    zmax = max(zmax, _moment_z(L.reshape(R, -1), P.reshape(R, -1)))
    # second moments: cross-label pairs (L^1(x), L^2(y)), same-label pairs, and squares
    for i in range(N):
        for j in range(N):
            zmax = max(zmax, _product_z(L, P, i, j))
    base = {"n": n, "N": N}
    return [
        _rec(cfg, {**base, "stat": "ks_max"}, ks.max(), 0.0, R, t0, per_site=ks.tolist()),
        _rec(cfg, {**base, "stat": "moment_zmax"}, zmax, 0.0, R, t0),
        _rec(cfg, {**base, "stat": "mean_L"}, L.sum(axis=2).mean(), 0.0, R, t0,
             gff=float(P.sum(axis=2).mean())),
    ]


# ---------------------------------------------------------------------------
# corr-sandwich


def _sandwich_pairs(g, d):
    out = []
    for ax in range(2):
        e = np.zeros(2, dtype=np.int64)
        e[ax] = d
        for i, c in enumerate(g.coords):
            q = tuple(int(v) for v in c + e)
            if g.contains(q):
                out.append((i, g.index(q)))
    return np.array(out, dtype=np.int64)


def _sandwich_chain(n, N, beta, d_list, sweeps, burn_in, batches, seed, chain):
    g = build_box(n)
    rng = replica_rng(seed, chain)
    ch = SpinChain(g, N, beta, "wolff", rng)
    ch.sweep(burn_in)
    pairs = [_sandwich_pairs(g, d) for d in d_list]
    allp = np.concatenate(pairs)
    dots = np.zeros((sweeps, len(allp)))
    conn = np.zeros((sweeps, len(allp)))
    for s in range(sweeps):
        ch.sweep(1)
        th = ch.theta
        dots[s] = np.sum(th[allp[:, 0]] * th[allp[:, 1]], axis=1)
        conn[s] = connected_pairs(cable_on_extension(th, beta, rng, graph=g), allp)
    B = sweeps // batches
    return (dots[:B * batches].reshape(batches, B, -1).mean(axis=1),
            conn[:B * batches].reshape(batches, B, -1).mean(axis=1))


def corr_sandwich(cfg: ExperimentConfig, workers: int = 1) -> list:
    p = cfg.params
    n, N, beta, ds = p["n"], p["N"], p["beta"], p["distances"]
    t0 = time.perf_counter()
    res = run_tasks([(_sandwich_chain, (n, N, beta, ds, p["sweeps"], p["burn_in"], p["batches"],
                                        cfg.seed, c)) for c in range(p["chains"])], workers)
    D = np.concatenate([r[0] for r in res])
    C = np.concatenate([r[1] for r in res])
    dm, dse = _mean_se(D)
    cm, cse = _mean_se(C)
    g = build_box(n)
    sizes = [len(_sandwich_pairs(g, d)) for d in ds]
    out, start = [], 0
    for d, sz in zip(ds, sizes):
        sl = slice(start, start + sz)
        start += sz
        lower = cm[sl] / N - 3 * np.hypot(dse[sl], cse[sl] / N)
        upper = N * cm[sl] + 3 * np.hypot(dse[sl], N * cse[sl])
        ok = (dm[sl] >= lower) & (dm[sl] <= upper)
        out.append(_rec(cfg, {"n": n, "N": N, "beta": beta, "distance": d}, dm[sl].mean(),
                        float(np.sqrt(np.mean(dse[sl] ** 2))), len(D), t0,
                        connectivity=float(cm[sl].mean()), pairs=sz, inside=int(ok.sum()),
                        ratio_min=float(np.min(dm[sl] / cm[sl])),
                        ratio_max=float(np.max(dm[sl] / cm[sl]))))
    return out


# ---------------------------------------------------------------------------
# polyakov-limit


def polyakov_offsets(radius: float):
    r = int(math.floor(radius))
    return [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)
            if 0 < a * a + b * b <= radius * radius]


def _polyakov_chain(L, N, beta, offsets, sweeps, burn_in, thin, batches, seed, chain):
    g = build_torus(L)
    ch = SpinChain(g, N, beta, "wolff", replica_rng(seed, chain))
    ch.sweep(burn_in)
    rows = np.zeros((sweeps, len(offsets)))
    for s in range(sweeps):
        ch.sweep(thin)
        rows[s] = beta * rooted_square_moments(g, ch.theta, offsets, component=0)
    B = sweeps // batches
    return rows[:B * batches].reshape(batches, B, -1).mean(axis=1)


def polyakov_limit(cfg: ExperimentConfig, workers: int = 1) -> list:
    p = cfg.params
    L, N = p["L"], p["N"]
    betas = p["betas"]
    sweeps = _broadcast(p["sweeps"], len(betas), "sweeps")
    thin = _broadcast(p["thin"], len(betas), "thin")
    offs = polyakov_offsets(p["radius"])
    G = np.array([rooted_torus_covariance(L, o, o) for o in offs])
    out = []
    for beta, sw, th in zip(betas, sweeps, thin):
        t0 = time.perf_counter()
        sd = derive_seed(cfg.seed, int(round(beta * 1000)))
        per = sw // p["chains"]
        res = run_tasks([(_polyakov_chain, (L, N, beta, offs, per, p["burn_in"], th, p["batches"],
                                            sd, c)) for c in range(p["chains"])], workers)
        rows = np.concatenate(res)
        m, se = _mean_se(rows)
        rel_rows = rows / G - 1.0
        dev, dev_se = _mean_se(rel_rows.mean(axis=1))
        out.append(_rec(cfg, {"L": L, "N": N, "beta": beta, "radius": p["radius"]}, float(dev),
                        float(dev_se), sw, t0, offsets=[list(o) for o in offs],
                        variance=m.tolist(), variance_se=se.tolist(), green=G.tolist(),
                        max_rel_error=float(np.max(np.abs(m / G - 1)))))
    return out


# ---------------------------------------------------------------------------
# chessboard-tail


def _chess_chain(L, N, beta, Ks, seps, sweeps, burn_in, batches, seed, chain):
    g = build_torus(L)
    ch = SpinChain(g, N, beta, "wolff", replica_rng(seed, chain))
    ch.sweep(burn_in)
    tails = np.zeros((sweeps, len(Ks)))
    two = np.zeros((sweeps, len(seps)))
    Kb = np.asarray(Ks, dtype=float) / math.sqrt(beta)
    for s in range(sweeps):
        ch.sweep(1)
        G = g.to_grid(ch.theta)
        gx = np.roll(G, -1, axis=0) - G
        gy = np.roll(G, -1, axis=1) - G
        norms = np.concatenate([np.linalg.norm(gx, axis=2).ravel(),
                                np.linalg.norm(gy, axis=2).ravel()])
        tails[s] = [(norms >= k).mean() for k in Kb]
        for j, d in enumerate(seps):
            two[s, j] = 0.5 * (np.mean(gx * np.roll(gx, -d, axis=0))
                               + np.mean(gy * np.roll(gy, -d, axis=1)))
    B = sweeps // batches
    cut = B * batches
    return (tails[:cut].reshape(batches, B, -1).mean(axis=1),
            two[:cut].reshape(batches, B, -1).mean(axis=1))


def chessboard_tail(cfg: ExperimentConfig, workers: int = 1) -> list:
    p = cfg.params
    L, N, beta, Ks, seps = p["L"], p["N"], p["beta"], p["K"], p["separations"]
    if any(d % 2 for d in seps):
        raise ConfigError("separations must be even", "separations")
    t0 = time.perf_counter()
    per = p["sweeps"] // p["chains"]
    res = run_tasks([(_chess_chain, (L, N, beta, Ks, seps, per, p["burn_in"], p["batches"],
                                     cfg.seed, c)) for c in range(p["chains"])], workers)
    T = np.concatenate([r[0] for r in res])
    W = np.concatenate([r[1] for r in res])
    tm, tse = _mean_se(T)
    wm, wse = _mean_se(W)
    base = {"L": L, "N": N, "beta": beta}
    out = [_rec(cfg, {**base, "K": k}, tm[j], tse[j], per * p["chains"], t0,
                bound=math.exp(-k * k / 2)) for j, k in enumerate(Ks)]
    out += [_rec(cfg, {**base, "separation": d}, wm[j], wse[j], per * p["chains"], t0)
            for j, d in enumerate(seps)]
    return out


# ---------------------------------------------------------------------------
# gm-suite


def _xy_on_gm(gm: GmGraph, beta, distances, sweeps, burn_in, batches, rng):
    g = gm.graph
    ch = SpinChain(g, 2, beta * gm.edge_mask(), "wolff", rng)
    ch.sweep(burn_in)
    M = g.to_grid(gm.mask.astype(float))
    rows = np.zeros((sweeps, len(distances)))
    cnt = np.zeros(len(distances))
    for j, d in enumerate(distances):
        cnt[j] = np.sum(M[:-d] * M[d:]) + np.sum(M[:, :-d] * M[:, d:])
    for s in range(sweeps):
        ch.sweep(1)
        T = g.to_grid(ch.theta)
        for j, d in enumerate(distances):
            a = np.sum(np.sum(T[:-d] * T[d:], axis=2) * M[:-d] * M[d:])
            b = np.sum(np.sum(T[:, :-d] * T[:, d:], axis=2) * M[:, :-d] * M[:, d:])
            rows[s, j] = (a + b) / max(cnt[j], 1)
    B = sweeps // batches
    return rows[:B * batches].reshape(batches, B, -1).mean(axis=1)


def _gm_replica(n, N, m, beta, p_bern, xy, distances, sweeps, burn_in, batches, seed, r):
    g = build_box(n)
    soup = sample_soup(g, N=N, mass=m, seed=replica_rng(seed, r, 0), mass_cap=m)
    gm = build_Gm(soup, [m], beta)[0]
    ct = complement_tail(gm)
    sd = np.asarray(clusters(g, ~gm.mask & ~g.boundary, 1).site_diameters("linf"))
    bd = bernoulli_on_Gm(gm, p_bern, replica_rng(seed, r, 1))
    xyrows = _xy_on_gm(gm, beta, distances, sweeps, burn_in, batches,
                       replica_rng(seed, r, 2)) if xy else None
    return {"density": gm.density, "giant": ct.giant_fraction, "diam": sd[sd >= 0],
            "spans": bd.spans, "largest": bd.largest_fraction, "closed_max": bd.closed_max_diameter,
            "xy": xyrows}


def _fk_replica(n, N, m, beta, beta_ising, sweeps, burn_in, seed, r):
    g = build_box(n)
    soup = sample_soup(g, N=N, mass=m, seed=replica_rng(seed, r, 0), mass_cap=m)
    gm = build_Gm(soup, [m], beta)[0]
    res = fk_ising(g, beta_ising, replica_rng(seed, r, 1), site_mask=gm.mask, sweeps=sweeps,
                   burn_in=burn_in)
    return res.giant_density


def _trend_replica(n, N, masses, beta, seed, r):
    g = build_box(n)
    soup = sample_soup(g, N=N, mass=min(masses), seed=replica_rng(seed, r), mass_cap=max(masses))
    gms = build_Gm(soup, masses, beta)
    centre = np.abs(g.coords).max(axis=1) <= n // 4
    return outside_probability(gms, centre)


def gm_suite(cfg: ExperimentConfig, workers: int = 1) -> list:
    p = cfg.params
    n, N, m, beta = p["n"], p["N"], p["m"], p["beta"]
    ds = list(range(1, p["xy_rmax"] + 1))
    base = {"n": n, "N": N, "m": m, "beta": beta}
    out = []
    t0 = time.perf_counter()
    sd = derive_seed(cfg.seed, 1)
    R = p["replicas"]
    res = run_tasks([(_gm_replica, (n, N, m, beta, p["p"], r < p["xy_replicas"], ds,
                                    p["xy_sweeps"], p["burn_in"], p["batches"], sd, r))
                     for r in range(R)], workers)
    # (a) XY two-point on G_m
    xy = np.concatenate([r["xy"] for r in res if r["xy"] is not None])
    xm, xse = _mean_se(xy)
    f = _fit_extra(_fit(ds, xm, xse))
    out.append(_rec(cfg, {**base, "item": "xy_decay"}, f["rate"], f["rate_stderr"], len(xy), t0,
                    ci=f["ci"], r2=f["r2"], correlation=xm.tolist(), correlation_se=xse.tolist(),
                    distances=ds, dropped=f["dropped"]))
    # (b) complement tail, pooled over replicas
    tf = tail_fit(np.concatenate([r["diam"] for r in res]), tmin=1)
    r2 = tf.fit.r2 if tf.fit is not None else float("nan")
    rate = tf.fit.rate if tf.fit is not None else float("nan")
    ci = list(tf.fit.ci()) if tf.fit is not None else [float("nan")] * 2
    out.append(_rec(cfg, {**base, "item": "complement_tail"}, r2, 0.0, R, t0, rate=rate, ci=ci,
                    exponential=tf.exponential,
                    giant_fraction=float(np.mean([r["giant"] for r in res])),
                    density=float(np.mean([r["density"] for r in res]))))
    # (c) Bernoulli spanning
    sp = np.array([r["spans"] for r in res], dtype=float)
    out.append(_rec(cfg, {**base, "item": "bernoulli_span", "p": p["p"]}, sp.mean(),
                    math.sqrt(max(sp.mean() * (1 - sp.mean()), 0) / R), R, t0,
                    largest_fraction=float(np.mean([r["largest"] for r in res])),
                    closed_max_diameter=int(max(r["closed_max"] for r in res))))
    # (d) FK-Ising giant cluster across windows
    for w in p["fk_windows"]:
        t1 = time.perf_counter()
        sdw = derive_seed(cfg.seed, 2, w)
        gd = np.array(run_tasks([(_fk_replica, (w, N, m, beta, p["beta_ising"], p["fk_sweeps"],
                                                p["burn_in"], sdw, r))
                                 for r in range(p["fk_replicas"])], workers))
        se = gd.std(ddof=1) / math.sqrt(len(gd)) if len(gd) > 1 else float("nan")
        out.append(_rec(cfg, {**base, "item": "fk_giant", "window": 2 * w + 1,
                              "beta_ising": p["beta_ising"]}, gd.mean(), se, len(gd), t1))
    # (e) domination constant
    t1 = time.perf_counter()
    out.append(_rec(cfg, {"item": "domination", "beta_ising": p["beta_ising"]},
                    fk_domination_p(p["beta_ising"]), 0.0, 1, t1,
                    at_log3_half=fk_domination_p(math.log(3) / 2)))
    # P(x outside G_m) along the mass grid
    t1 = time.perf_counter()
    ms = sorted(p["trend_masses"])
    sdt = derive_seed(cfg.seed, 3)
    rows = np.array(run_tasks([(_trend_replica, (p["trend_n"], N, ms, p["trend_beta"], sdt, r))
                               for r in range(p["trend_replicas"])], workers))
    om, ose = _mean_se(rows)
    for j, mm in enumerate(ms):
        out.append(_rec(cfg, {"item": "outside", "m": mm, "beta": p["trend_beta"],
                              "n": p["trend_n"]}, om[j], ose[j], len(rows), t1,
                        reference=p["trend_beta"] ** (N / 2) * math.log(1 / mm) ** (-N / 2)))
    return out


# ---------------------------------------------------------------------------
# equator-diagnostic


def _equator_chain(L, N, beta, sweeps, burn_in, nmax, seed, chain):
    g = build_torus(L)
    rng = replica_rng(seed, chain)
    ch = SpinChain(g, N, beta, "wolff", rng)
    ch.sweep(burn_in)
    cnt = np.zeros(sweeps)
    big = np.zeros(sweeps)
    for s in range(sweeps):
        ch.sweep(1)
        ref = cable_on_extension(ch.theta, beta, rng, component=N - 1, graph=g)
        cnt[s] = quadrant_connection_count(ref, nmax)
        big[s] = equator_dual(ref).largest_cluster() / g.n_sites
    return cnt, big


def equator_diagnostic(cfg: ExperimentConfig, workers: int = 1) -> list:
    p = cfg.params
    out = []
    for L in p["L"]:
        t0 = time.perf_counter()
        nmax = max(1, L // 4)
        sd = derive_seed(cfg.seed, L)
        res = run_tasks([(_equator_chain, (L, p["N"], p["beta"], p["sweeps"], p["burn_in"], nmax,
                                           sd, c)) for c in range(p["chains"])], workers)
        cnt = np.concatenate([r[0] for r in res])
        big = np.concatenate([r[1] for r in res])
        chain_means = np.array([r[0].mean() for r in res])
        se = chain_means.std(ddof=1) / math.sqrt(len(res)) if len(res) > 1 else float("nan")
        out.append(_rec(cfg, {"L": L, "N": p["N"], "beta": p["beta"], "nmax": nmax}, cnt.mean(),
                        se, len(cnt), t0, dual_largest_fraction=float(big.mean())))
    return out


# ---------------------------------------------------------------------------
# registry

SCHEMAS = {
    "exit-set-scan": {
        "N": (2, "int"), "R": (1.0, "float"), "k": (1, "int"), "eps": (0.5, "float"),
        "n": ([16, 32, 64, 128], "ints"), "replicas": ([1000], "ints"),
        "observable": ("reach", "str"), "metric": ("l1", "str"),
    },
    "connectivity-decay": {
        "n": (64, "int"), "N": (2, "int"), "R": (1.0, "float"), "k": (1, "int"),
        "distances": (list(range(4, 33)), "ints"), "replicas": (2000, "int"),
        "metric": ("l1", "str"),
    },
    "isomorphism-suite": {"n": (4, "int"), "N": (2, "int"), "replicas": (100000, "int")},
    "corr-sandwich": {
        "n": (8, "int"), "N": (2, "int"), "beta": (1.0, "float"), "distances": ([1, 2, 4], "ints"),
        "chains": (8, "int"), "sweeps": (10000, "int"), "burn_in": (500, "int"),
        "batches": (20, "int"),
    },
    "polyakov-limit": {
        "L": (64, "int"), "N": (3, "int"), "betas": ([16.0, 64.0, 256.0], "floats"),
        "sweeps": ([4000, 12000, 40000], "ints"), "thin": ([1], "ints"), "chains": (4, "int"),
        "burn_in": (500, "int"), "batches": (20, "int"), "radius": (4.0, "float"),
    },
    "chessboard-tail": {
        "L": (32, "int"), "N": (3, "int"), "beta": (64.0, "float"), "K": ([3.0, 4.0, 5.0], "floats"),
        "separations": ([2, 4, 8], "ints"), "sweeps": (40000, "int"), "chains": (4, "int"),
        "burn_in": (500, "int"), "batches": (20, "int"),
    },
    "gm-suite": {
        "n": (256, "int"), "N": (2, "int"), "m": (0.05, "float"), "beta": (4.0, "float"),
        "replicas": (20, "int"), "p": (0.6, "float"), "xy_replicas": (4, "int"),
        "xy_rmax": (8, "int"), "xy_sweeps": (400, "int"), "burn_in": (100, "int"),
        "batches": (20, "int"), "fk_windows": ([64, 128, 256], "ints"), "fk_replicas": (4, "int"),
        "fk_sweeps": (200, "int"), "beta_ising": (1.0, "float"),
        "trend_masses": ([0.1, 0.01, 0.001], "floats"), "trend_beta": (1.0, "float"),
        "trend_n": (128, "int"), "trend_replicas": (10, "int"),
    },
    "equator-diagnostic": {
        "L": ([16, 32, 64], "ints"), "N": (3, "int"), "beta": (4.0, "float"),
        "sweeps": (500, "int"), "chains": (4, "int"), "burn_in": (200, "int"),
    },
}

RUNNERS: dict[str, Callable] = {
    "exit-set-scan": exit_set_scan,
    "connectivity-decay": connectivity_decay,
    "isomorphism-suite": isomorphism_suite,
    "corr-sandwich": corr_sandwich,
    "polyakov-limit": polyakov_limit,
    "chessboard-tail": chessboard_tail,
    "gm-suite": gm_suite,
    "equator-diagnostic": equator_diagnostic,
}


def run(cfg: ExperimentConfig, workers: int = 1) -> list:
    try:
        fn = RUNNERS[cfg.experiment]
    except KeyError:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}", "experiment") from None
    return fn(cfg, workers)
