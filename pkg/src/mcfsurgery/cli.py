"""Command line entry point: ``mcfsurgery [config] --tau ... --H2 ... --H3 ...``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import MCFError
from .io import load_config


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcfsurgery", description="Mean curvature flow with numerical surgery.")
    p.add_argument("config", nargs="?", help="flat 'key = value' configuration file")
    p.add_argument("--surface", help="sphere | dumbbell | torus_sphere | file:<path>")
    p.add_argument("--tau", type=float, help="time step")
    p.add_argument("--H2", type=float, help="post-surgery curvature bound / marking threshold")
    p.add_argument("--H3", type=float, help="surgery trigger threshold")
    p.add_argument("--q", type=int, help="BDF order (1..5)")
    p.add_argument("--end-time", type=float, dest="end_time", help="stop at this time (default: extinction)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--snapshot-every", type=int, dest="snapshot_every", help="VTK snapshot stride (0 = off)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any other configuration key")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k) for k in ("surface", "tau", "H2", "H3", "q", "end_time", "out", "snapshot_every")}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        overrides[key.strip()] = value
    try:
        config = load_config(args.config, overrides)
    except (KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    from .driver import run

    try:
        summary = run(config)
    except MCFError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(summary.to_text())
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
