"""Lower bound on expected total variation against the binomial-kernel process.

Prints the psi-integral bound, the jump-size integral and a Monte-Carlo
estimate for each family, plus the Brownian constant C.

    python scripts/tv_bounds.py --n 50000
"""

import argparse
import math

from mimic.families import get_family
from mimic.simulate import SimConfig, simulate
from mimic.variation import attained_tv, brownian_constant, expected_tv_mc, tv_lower_bound


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    C, C_up = brownian_constant()
    print(f"C = {C:.11f}   closed-form upper bound {C_up:.6f}")
    rows = [("uniform", 1e-3), ("gaussian", 0.01), ("gaussian", 0.1), ("exp-brownian", 0.05),
            ("atom-mix", 0.0)]
    print(f"{'family':>13} {'eps':>6} {'bound':>10} {'attained':>10} {'MC hk':>10} {'se':>8}")
    for name, eps in rows:
        fam = get_family(name)
        lb = tv_lower_bound(fam, eps, args.T)
        at = attained_tv(fam, eps, args.T)
        kernel = "closed-form" if name == "atom-mix" else "hk"
        est = expected_tv_mc(simulate(SimConfig(name, {}, kernel, eps, args.T, args.n, args.seed)))
        print(f"{name:>13} {eps:6.3f} {lb:10.6f} {at:10.6f} {est.estimate:10.6f} {est.se:8.5f}")
    eps = 0.01
    print(f"C (sqrt(T) - sqrt(eps)) at eps={eps}: {C * (math.sqrt(args.T) - math.sqrt(eps)):.6f}")


if __name__ == "__main__":
    main()
