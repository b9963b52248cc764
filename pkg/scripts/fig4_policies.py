"""TABS against the centralized delayed-off queue as the mean standby period varies."""

import argparse
import csv
from pathlib import Path

from tabsim.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/fig4")
    ap.add_argument("--replications", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    code = cli(["sweep", "fig4", "--out", args.out, "--replications", str(args.replications),
                "--jobs", str(args.jobs)])
    if code:
        raise SystemExit(code)
    with (Path(args.out) / "metrics.csv").open() as fh:
        for row in csv.DictReader(fh):
            print(f"{row['policy']:10s} 1/mu={1 / float(row['mu']):>6g} wait={row['mean_wait']:>10s} "
                  f"power={row['mean_power']:>10s} {row['status']}")


if __name__ == "__main__":
    main()
