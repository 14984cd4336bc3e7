"""Command line entry point: ``stwave <command> [--config F] [--out D] [--seed S] [--threads N]``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import StwaveError

log = logging.getLogger("stwave")

COMMANDS = ("verify-calculus", "rates", "stability", "adaptive", "compress", "all")


def build_parser():
    p = argparse.ArgumentParser(prog="stwave", description=__doc__.split(":")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key=value file")
    p.add_argument("--out", help="output directory (default: results)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker cap for independent tasks")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    over = {"out": args.out, "seed": args.seed, "threads": args.threads}
    try:
        if args.config:
            cfg = harness.ExperimentConfig.from_file(args.config, **over)
        else:
            cfg = harness.ExperimentConfig.from_text("", **over)
        results, timings = harness.run(args.command, cfg)
    except StwaveError as exc:
        log.error("error: %s", exc)
        return 2
    ok = True
    for r in results:
        for c in r.criteria:
            log.info("%-5s %-16s %-36s measured=%.6g limit=%.6g", "PASS" if c.passed else "FAIL",
                     r.name, c.name, c.measured, c.limit)
            ok &= c.passed
        log.info("      %-16s %.1f s, files: %s", r.name, timings[r.name], ", ".join(r.files))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
