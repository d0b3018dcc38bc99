"""Command line front end.

    soar-bench run     --config cfg.json [--out out.csv] [--seed N]
                       [--workers N] [--check]
    soar-bench sweep   (alias of run; requires a sweep section)
    soar-bench compare --config cfg.json ...   (all methods, no sweep)
    soar-bench rates   --config cfg.json [--out out.csv]
    soar-bench mesh-info (--rings N | --level N)

Exit codes: 0 success, 2 configuration error, 3 all runs diverged,
4 a --check trend assertion failed.
"""

import argparse
import sys

import numpy as np

from .bench import (
    ConfigError,
    check_trends,
    compare_methods,
    emit_csv,
    format_rate_table,
    load_config,
    rate_report,
    run_config,
)
from .mesh import disk_mesh, disk_mesh_rings


def main(argv=None):
    parser = argparse.ArgumentParser(prog="soar-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("run", "sweep", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--check", action="store_true")

    p = sub.add_parser("rates")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("mesh-info")
    p.add_argument("--rings", type=int, default=None)
    p.add_argument("--level", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args):
    if args.command == "mesh-info":
        if (args.rings is None) == (args.level is None):
            raise ConfigError("mesh-info needs exactly one of --rings or --level")
        mesh = disk_mesh_rings(args.rings) if args.rings else disk_mesh(args.level)
        b = np.unique(mesh.boundary_edges).size
        print(
            f"nodes {mesh.n_nodes}  triangles {mesh.n_triangles}  "
            f"boundary nodes {b}  area {mesh.triangle_areas().sum():.6f}"
        )
        return 0

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.setdefault("noise", {})["seed"] = args.seed

    if args.command == "rates":
        rows = rate_report(cfg)
        table = format_rate_table(rows)
        print(table)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(table + "\n")
        return 0

    if args.command == "sweep" and not cfg.get("sweep"):
        raise ConfigError("sweep subcommand requires a sweep section in the config")

    runner = compare_methods if args.command == "compare" else run_config
    rows = runner(cfg, workers=args.workers)

    out = args.out or cfg.get("output")
    if out:
        emit_csv(rows, out)
    for r in rows:
        tag = f" {r.sweep_name}={r.sweep_value:g}" if r.sweep_name else ""
        print(
            f"{r.method:<10} delta'={r.delta_prime:<8g}{tag} "
            f"k*={r.k_star:<6d} E={r.error:.5e} [{r.stopped_by}]"
        )

    if all(r.stopped_by == "divergence" for r in rows):
        return 3
    if args.check:
        failures = check_trends(rows)
        for msg in failures:
            print(f"check failed: {msg}", file=sys.stderr)
        if failures:
            return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
