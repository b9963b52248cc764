"""Mean wait and power per server against N for mean setup times 10 and 100."""

import argparse
import csv
from pathlib import Path

from tabsim.cli import main as cli

NAMES = ("fig3-nu10", "fig3-nu100")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--replications", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    for name in NAMES:
        out = Path(args.out) / name
        code = cli(["sweep", name, "--out", str(out), "--replications", str(args.replications),
                    "--jobs", str(args.jobs)])
        if code:
            raise SystemExit(code)
        with (out / "metrics.csv").open() as fh:
            for row in csv.DictReader(fh):
                print(f"{name:11s} N={row['N']:>6s} wait={row['mean_wait']:>10s} "
                      f"power={row['mean_power']:>10s} {row['status']}")


if __name__ == "__main__":
    main()
