#!/usr/bin/env python3
"""Run the full five-scenario case study into one output directory.

    python scripts/run_case_study.py results/ --trials 1000000

Writes the likelihood table, the ranked comparison with exceedance curves,
the speed sweep, an MC validation report and a calibration report.  Exits
non-zero if any step does.
"""

import argparse
import sys

from click.testing import CliRunner

from railrisk.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="results")
    ap.add_argument("--config", default=None)
    ap.add_argument("--trials", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    common = ["--out", args.out] + (["--config", args.config] if args.config else [])
    steps = [
        ["likelihoods"],
        ["compare"],
        ["sensitivity", "--speeds", "25,40,50"],
        ["validate", "--trials", str(args.trials), "--seed", str(args.seed),
         "--workers", str(args.workers)],
        ["calibrate"],
    ]
    status = 0
    runner = CliRunner()
    for step in steps:
        res = runner.invoke(cli, step + common)
        print(f"$ railrisk {' '.join(step)}")
        print(res.output, end="")
        if res.exit_code:
            print(f"  -> exit {res.exit_code}", file=sys.stderr)
            status = max(status, res.exit_code)
    return status


if __name__ == "__main__":
    sys.exit(main())
