"""Distance between simulation and fluid limit as N grows, at constant load 0.3.

Prints the median sup-distance to the fluid path, the stationary delta0 and
delta1 after warmup, and the mean power, so the O(N^-1/2) decay is visible.
"""

import argparse
import dataclasses

import numpy as np

from tabsim import metrics as M
from tabsim.cli import parse_config, run_fluid, simulate_replications


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="100,1000,10000")
    ap.add_argument("--replications", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    base = parse_config("fig2-left")
    traj = run_fluid(base)
    fp = traj.final
    print(f"fluid end state: delta0={fp.delta0:.4f} delta1={fp.delta1:.4f}")
    print(f"{'N':>6s} {'gap':>8s} {'delta0':>8s} {'delta1':>8s} {'power':>8s}")
    for n in (int(x) for x in args.sizes.split(",")):
        cfg = dataclasses.replace(base, n_servers=n, replications=args.replications)
        outs = simulate_replications(cfg, jobs=args.jobs)
        gap = np.median([M.trajectory_gap(o.samples, traj) for o in outs])
        warm = cfg.warmup_fraction * cfg.horizon
        st = [M.stationary_estimate(o.samples, warm).state for o in outs]
        d0 = np.mean([s.delta0 for s in st])
        d1 = np.mean([s.delta1 for s in st])
        power = np.mean([o.report.mean_power for o in outs])
        print(f"{n:6d} {gap:8.4f} {d0:8.4f} {d1:8.4f} {power:8.2f}")


if __name__ == "__main__":
    main()
