"""Summary tables (CSV) and decay plots from a records file."""
from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .records import read_records  # noqa: E402


class ReportError(ValueError):
    pass


def group(records) -> dict:
    out = defaultdict(list)
    for r in records:
        out[r.experiment].append(r)
    return dict(out)


def write_table(path, recs) -> None:
    keys = []
    for r in recs:
        for k in r.params:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys + ["estimate", "stderr", "replicas", "seed"])
        for r in recs:
            w.writerow([r.params.get(k, "") for k in keys]
                       + [repr(r.estimate), repr(r.stderr), r.replicas, r.seed])


def plot_decay(path, recs) -> bool:
    """Connectivity-vs-distance plot with the fitted line and its 95% band."""
    pts = [r for r in recs if "distance" in r.params]
    fits = [r for r in recs if r.params.get("fit") == "rate"]
    if not pts:
        return False
    d = np.array([r.params["distance"] for r in pts], dtype=float)
    p = np.array([r.estimate for r in pts])
    se = np.array([r.stderr for r in pts])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ok = p > 0
    ax.errorbar(d[ok], p[ok], yerr=se[ok], fmt="o", ms=3, label="estimate")
    if fits:
        f = fits[-1]
        rr = np.linspace(d.min(), d.max(), 100)
        a = f.extra.get("intercept", 0.0)
        lo, hi = f.extra.get("ci", [f.estimate, f.estimate])
        ax.plot(rr, np.exp(a - f.estimate * rr), "k-", lw=1, label=f"rate {f.estimate:.3f}")
        r0 = rr.mean()
        ax.fill_between(rr, np.exp(a - f.estimate * r0 - hi * (rr - r0)),
                        np.exp(a - f.estimate * r0 - lo * (rr - r0)), color="k", alpha=0.15)
    ax.set_yscale("log")
    ax.set_xlabel("distance")
    ax.set_ylabel("probability")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def plot_series(path, recs, key) -> bool:
    pts = [r for r in recs if key in r.params]
    if len(pts) < 2:
        return False
    x = np.array([r.params[key] for r in pts], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(x, [r.estimate for r in pts], yerr=[r.stderr for r in pts], fmt="o-", ms=3)
    ax.set_xscale("log", base=2)
    ax.set_xlabel(key)
    ax.set_ylabel("estimate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def report(records_path, out_dir) -> list:
    """Write one CSV per experiment (and plots where meaningful); returns written paths."""
    recs = read_records(records_path)
    if not recs:
        raise ReportError(f"no records in {records_path}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, rs in group(recs).items():
        base = os.path.join(out_dir, name)
        write_table(base + ".csv", rs)
        written.append(base + ".csv")
        if name == "connectivity-decay" and plot_decay(base + ".png", rs):
            written.append(base + ".png")
        elif name == "exit-set-scan" and plot_series(base + ".png", rs, "n"):
            written.append(base + ".png")
    return written
