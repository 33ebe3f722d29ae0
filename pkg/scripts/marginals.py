"""KS and martingale checks of simulated ensembles against the target marginals.

    python scripts/marginals.py --n 100000 --eps 0.01
"""

import argparse
import time

from mimic.families import get_family
from mimic.simulate import SimConfig, marginal_report, simulate

RUNS = [("gaussian", "hk"), ("gaussian", "hp"), ("uniform", "hk"), ("uniform", "hp"),
        ("exp-brownian", "hk"), ("atom-mix", "closed-form"), ("uniform", "reverse")]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--eps", type=float, default=0.01)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    checkpoints = [c * args.T for c in (0.05, 0.25, 0.5, 1.0)]
    print(f"{'family':>13} {'kernel':>11} {'t':>5} {'KS':>8} {'crit':>8} {'mean z':>7} "
          f"{'mart z':>7}  time")
    for name, kernel in RUNS:
        eps = 0.0 if kernel == "reverse" else args.eps
        t0 = time.time()
        ps = simulate(SimConfig(name, {}, kernel, eps, args.T, args.n, args.seed))
        fam = get_family(name)
        cps = [c for c in checkpoints if c >= ps.t0]
        rep = marginal_report(ps, fam, cps)
        wall = time.time() - t0
        for c in rep.checkpoints:
            mz = (c.mean - fam.mean) / c.mean_se if c.mean_se > 0 else 0.0
            tz = c.mart_mean / c.mart_se if c.mart_se > 0 else 0.0
            print(f"{name:>13} {kernel:>11} {c.t:5.2f} {c.ks:8.5f} {c.ks_critical:8.5f} "
                  f"{mz:7.2f} {tz:7.2f}  {wall:.1f}s")
        print(f"{'':>13} jumps/path {rep.jumps_mean:.4f}"
              + (f" (expected {rep.jumps_expected:.4f})" if rep.jumps_expected else ""))


if __name__ == "__main__":
    main()
