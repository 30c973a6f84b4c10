"""Command line: ``gfflab run|render|report|selftest``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

from . import __version__
from .records import ConfigError, append_records, build_config, load_config, parse_config_text

WORKERS_ENV = "GFFLAB_WORKERS"

RENDER_SCHEMA = {
    "size": (512, "int"), "mass": (0.0, "float"), "N": (2, "int"), "components": ([0, 1], "ints"),
    "input": ("", "str"), "overlay_R": (0.0, "float"), "overlay_k": (1, "int"),
    "output": ("angles.ppm", "str"),
}


def _workers(flag):
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        try:
            w = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}", WORKERS_ENV) from None
        source = "env"
    elif flag is not None:
        w, source = flag, "flag"
    else:
        w, source = 1, "default"
    if w < 1:
        raise ConfigError("worker count must be >= 1", "workers")
    return w, source


def _writable_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise RuntimeError(f"output directory {path} is not writable")


def cmd_run(args) -> int:
    from .experiments import SCHEMAS, run

    if not args.config:
        raise ConfigError("run needs --config", "config")
    cfg = load_config(args.config, SCHEMAS, args.seed)
    workers, source = _workers(args.workers)
    _writable_dir(args.out)
    t0 = time.time()
    recs = run(cfg, workers)
    path = os.path.join(args.out, "records.jsonl")
    append_records(path, recs)
    manifest = {"command": "run", "experiment": cfg.experiment, "config": os.path.abspath(args.config),
                "seed": cfg.seed, "workers": workers, "workers_source": source,
                "version": __version__, "records": len(recs), "started": t0,
                "elapsed": time.time() - t0}
    with open(os.path.join(args.out, "manifest.jsonl"), "a") as fh:
        fh.write(json.dumps(manifest, sort_keys=True) + "\n")
    for r in recs:
        print(f"{r.experiment} {json.dumps(r.params, sort_keys=True)} "
              f"estimate={r.estimate:.6g} stderr={r.stderr:.3g} replicas={r.replicas}")
    return 0


def cmd_render(args) -> int:
    from .exploration import explore
    from .gff import load_field
    from .render import memory_estimate, render_angles, sample_for_render

    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    raw.setdefault("experiment", "render")
    cfg = build_config(raw, RENDER_SCHEMA, args.seed)
    p = cfg.params
    _writable_dir(args.out)
    if p["input"]:
        field = load_field(p["input"])
    else:
        side = p["size"]
        print(f"estimated memory: {memory_estimate(side, p['N']) / 2 ** 20:.0f} MiB for side {side}")
        field = sample_for_render(side, p["mass"], p["N"], cfg.seed, huge=args.huge)
    overlay = None
    if p["overlay_R"] > 0:
        overlay = explore(field, p["overlay_R"], p["overlay_k"], check_boundary=False).explored
    comps = tuple(p["components"]) if field.N != 2 else None
    out = os.path.join(args.out, p["output"])
    render_angles(field, out, comps, overlay)
    print(out)
    return 0


def cmd_report(args) -> int:
    from .report import report

    path = os.path.join(args.out, "records.jsonl")
    if not os.path.exists(path):
        raise RuntimeError(f"no records file at {path}")
    for p in report(path, os.path.join(args.out, "report")):
        print(p)
    return 0


def cmd_selftest(args) -> int:
    from .cable import open_probability
    from .harmonic import green
    from .lattice import build_box
    from .spin import fk_domination_p, two_spin_correlation

    checks = [
        ("green center of Lambda_1", green(build_box(1))((0, 0), (0, 0)), 0.25, 1e-10),
        ("open probability a=b=1", float(open_probability(1.0, 1.0)), 1 - math.exp(-2), 1e-12),
        ("domination constant", fk_domination_p(1.0), math.tanh(1.0), 1e-12),
        ("two-spin correlation N=2", two_spin_correlation(2, 1.0), 0.4463899658965, 1e-9),
    ]
    bad = 0
    for name, got, want, tol in checks:
        ok = abs(got - want) <= tol
        bad += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {got!r} (expected {want!r})")
    return 0 if bad == 0 else 3


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfflab", description="GFF, loop soup and O(N) experiments")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "render", "report", "selftest"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--workers", type=int, help=f"worker processes ({WORKERS_ENV} overrides)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--huge", action="store_true", help="allow very large renders")
    return ap


COMMANDS = {"run": cmd_run, "render": cmd_render, "report": cmd_report, "selftest": cmd_selftest}


def main(argv=None) -> int:
    try:
        args = parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
