"""Convergence of the fluid limit to its fixed point from random initial states."""

import argparse

from tabsim.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario", nargs="?", default="fig2-left")
    ap.add_argument("--out", default="runs/stability")
    ap.add_argument("--initials", type=int, default=100)
    ap.add_argument("--horizon", type=float, default=2000.0)
    args = ap.parse_args()
    raise SystemExit(cli(["stability", args.scenario, "--out", args.out,
                          "--initials", str(args.initials), "--horizon", str(args.horizon)]))


if __name__ == "__main__":
    main()
