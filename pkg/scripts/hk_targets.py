"""Binomial-kernel targets a_t(x), b_t(x) against an exhaustive grid search,
and the resulting dual curves psi_t, theta_t written to CSV.

    python scripts/hk_targets.py --step 1e-3 --out psi_gaussian.csv
"""

import argparse

import numpy as np

from mimic.families import get_family
from mimic.transport import hk_bounds
from mimic.variation import build_psi_theta


def grid_argmax(family, t, x, step, lo=-6.0, hi=6.0, rows=400):
    g = np.round(np.arange(lo, hi + step / 2, step), 12)
    al, be = g[g < x], g[g > x]
    q_al = family.q(t, al)
    tangent = family.q(t, x) + family.dq(t, x) * (be - x) - family.q(t, be)
    best, arg = -np.inf, None
    for i in range(0, al.size, rows):
        val = (tangent[None, :] - q_al[i:i + rows, None]) / (be[None, :] - al[i:i + rows, None])
        k = np.unravel_index(np.argmax(val), val.shape)
        if val[k] > best:
            best, arg = val[k], (al[i + k[0]], be[k[1]])
    return arg


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--family", default="gaussian")
    ap.add_argument("--t", type=float, default=1.0)
    ap.add_argument("--step", type=float, default=1e-2)
    ap.add_argument("--out")
    args = ap.parse_args()
    fam = get_family(args.family)
    lg, rg = (float(v) for v in fam.gamma_support(args.t))
    print(f"{'x':>7} {'a':>10} {'grid a':>10} {'b':>10} {'grid b':>10}")
    for x in np.linspace(lg, rg, 9)[1:-1]:
        a, b = (float(v) for v in hk_bounds(fam, args.t, x))
        ga, gb = grid_argmax(fam, args.t, x, args.step)
        print(f"{x:7.3f} {a:10.5f} {ga:10.5f} {b:10.5f} {gb:10.5f}")
    if args.out:
        tab = build_psi_theta(fam, args.t)
        w = tab.right - tab.left
        x = np.linspace(tab.left - 2 * w, tab.right + 2 * w, 801)
        if fam.log_scale:
            x = x[x > 0]
        psi, th, _ = tab.evaluate(x)
        np.savetxt(args.out, np.column_stack([x, psi, th]), delimiter=",",
                   header="x,psi,theta", comments="", fmt="%.17g")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
