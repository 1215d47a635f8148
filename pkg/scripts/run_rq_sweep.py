#!/usr/bin/env python3
"""Reproduce the control-aggressiveness sweep: generate one MPC policy per
R/Q value, compute its exponent field, and report how the field distance to
the passive baseline shrinks as the control gets more timid.

Writes everything under --out (default out/rq_sweep) via the CLI sweep
command, then prints the summary table.
"""

import argparse
import os
import sys

from cftle.cli import main as cli_main

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(HERE, "..", "configs", "rq_sweep.json")


def run() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=DEFAULT_CONFIG)
    ap.add_argument("--out", default="out/rq_sweep")
    ap.add_argument("--threads", type=int, default=0)
    args = ap.parse_args()

    rcode = cli_main(["sweep", "--config", args.config, "--out", args.out,
                      "--threads", str(args.threads)])
    if rcode != 0:
        return rcode
    with open(os.path.join(args.out, "summary.csv")) as fh:
        print(fh.read())
    return 0


if __name__ == "__main__":
    sys.exit(run())
