"""Simulated paths against the fluid limit for constant, periodic and
hyper-exponential workloads. Writes runs/<scenario>/ and prints the gaps."""

import argparse
import csv
from pathlib import Path

from tabsim.cli import main as cli

NAMES = ("fig2-left", "fig2-middle", "fig2-right")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--replications", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    for name in NAMES:
        out = Path(args.out) / name
        code = cli(["both", name, "--out", str(out), "--replications", str(args.replications),
                    "--jobs", str(args.jobs)])
        if code:
            raise SystemExit(code)
        with (out / "metrics.csv").open() as fh:
            for row in csv.DictReader(fh):
                print(f"{name:12s} {row['source']:10s} wait={row['mean_wait']:>10s} "
                      f"power={row['mean_power']:>10s} gap={row['trajectory_gap'] or '-'}")


if __name__ == "__main__":
    main()
