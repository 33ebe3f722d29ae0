"""Command line entry point.

    mimic simulate --config cfg.json --out paths.csv --summary summary.json
    mimic check-marginals --config cfg.json
    mimic tv --config cfg.json
    mimic hedge-check --config cfg.json --paths paths.csv
    mimic transport-dump --config cfg.json --t 1 --out kernel.csv
    mimic psi-dump --config cfg.json --t 1 --out psi.csv

Exit codes: 0 success, 2 invalid input, 3 a statistical or pathwise check failed.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .config import load_config
from .errors import (ConfigError, NoDispersion, NonFiniteVariationInput, QueryOutsideSupport,
                     UnboundedRate, UnsupportedExample, UnsupportedFamily, InvalidProfile)
from .families import get_family
from .hedge import certify_ensemble
from .simulate import PathSet, marginal_report, simulate
from .transport import HPFamilyKernels, hk_bounds, pushforward_check
from .variation import (attained_tv, brownian_constant, build_psi_theta, dual_functions,
                        expected_tv_mc, tv_lower_bound, uniform_Psi, uniform_Theta)

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 2, 3
INVALID = (ConfigError, NoDispersion, NonFiniteVariationInput, QueryOutsideSupport,
           UnboundedRate, UnsupportedExample, UnsupportedFamily, InvalidProfile)
FMT = "%.17g"


# -- serialisation ------------------------------------------------------------

def _plain(v):
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def dumps(obj):
    # Python floats serialise with repr, which round-trips exactly
    return json.dumps(_plain(obj), indent=2, allow_nan=False)


def write_paths_csv(paths, fh):
    """path_id, event_index, time, value; event 0 is the initial condition."""
    n = len(paths)
    nj = paths.n_jumps
    rows = n + int(nj.sum())
    pid = np.repeat(np.arange(n), nj + 1)
    starts = np.r_[0, np.cumsum(nj + 1)][:-1]
    ev = np.arange(rows) - np.repeat(starts, nj + 1)
    t = np.empty(rows)
    v = np.empty(rows)
    first = ev == 0
    t[first], v[first] = paths.t0, paths.x0
    t[~first], v[~first] = paths.times, paths.values
    fh.write("path_id,event_index,time,value\n")
    np.savetxt(fh, np.column_stack([pid, ev, t, v]), fmt=["%d", "%d", FMT, FMT], delimiter=",")


def read_paths_csv(path, T):
    try:
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "path_id,event_index,time,value":
                raise ConfigError(f"{path}: unexpected header {header!r}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read paths: {exc}") from None
    if data.size == 0:
        raise ConfigError(f"{path}: no paths")
    pid, ev, t, v = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2], data[:, 3]
    first = ev == 0
    n = int(first.sum())
    if not (np.array_equal(pid[first], np.arange(n)) and np.all(np.diff(pid) >= 0)):
        raise ConfigError(f"{path}: path ids must be 0..n-1 in order, each starting at event 0")
    starts = np.flatnonzero(first)
    counts = np.diff(np.r_[starts, pid.size])
    if not np.array_equal(ev, np.arange(pid.size) - np.repeat(starts, counts)):
        raise ConfigError(f"{path}: event indices must run 0, 1, 2, ... within a path")
    t0 = t[first]
    if np.any(t0 != t0[0]):
        raise ConfigError(f"{path}: all paths must start at the same time")
    rest = ~first
    same = np.r_[False, pid[1:] == pid[:-1]]
    if np.any(t[same] <= t[np.flatnonzero(same) - 1]) or np.any(t > T):
        raise ConfigError(f"{path}: event times must increase strictly and stay <= T")
    return PathSet(float(t0[0]), T, v[first].copy(), np.r_[0, np.cumsum(counts - 1)],
                   t[rest].copy(), v[rest].copy(), {"source": str(path)})


def _write_json(path, obj):
    if path:
        with open(path, "w") as fh:
            fh.write(dumps(obj) + "\n")


# -- subcommands --------------------------------------------------------------

def _family(cfg):
    return get_family(cfg.family, **cfg.family_params)


def _checkpoints(cfg, paths):
    if cfg.checkpoints:
        return [float(c) for c in cfg.checkpoints]
    return [float(c) for c in np.linspace(paths.t0, cfg.T, 5)[1:]]


def _simulate(cfg, threads):
    return simulate(cfg.sim_config(), threads=threads)


def _marginals(cfg, paths, family):
    return marginal_report(paths, family, _checkpoints(cfg, paths), bins=cfg.bins)


def cmd_simulate(cfg, threads):
    if not cfg.out:
        raise ConfigError("simulate needs an output path (--out or \"out\")")
    paths = _simulate(cfg, threads)
    with open(cfg.out, "w") as fh:
        write_paths_csv(paths, fh)
    rep = _marginals(cfg, paths, _family(cfg))
    summary = {"config": cfg.to_dict(), "meta": paths.meta, "marginals": rep.to_dict()}
    _write_json(cfg.summary, summary)
    print(dumps({"n_paths": len(paths), "jumps_mean": rep.jumps_mean, "passed": rep.passed}))
    return EXIT_OK


def cmd_check_marginals(cfg, threads):
    family = _family(cfg)
    paths = read_paths_csv(cfg.paths, cfg.T) if cfg.paths else _simulate(cfg, threads)
    rep = _marginals(cfg, paths, family)
    out = {"config": cfg.to_dict(), "meta": paths.meta, "marginals": rep.to_dict()}
    _write_json(cfg.summary, out)
    print(dumps(rep.to_dict()))
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_tv(cfg, threads):
    family = _family(cfg)
    out = {"family": cfg.family, "eps": cfg.eps, "T": cfg.T}
    try:
        out["bound"] = tv_lower_bound(family, cfg.eps, cfg.T)
        out["attained"] = attained_tv(family, cfg.eps, cfg.T)
    except NoDispersion:
        out["bound"] = out["attained"] = None
    if cfg.n_paths > 1:
        paths = _simulate(cfg, threads)
        est = expected_tv_mc(paths, family)
        out.update(mc_estimate=est.estimate, mc_se=est.se, mc_n=est.n,
                   mc_bound=est.bound, eps_effective=paths.meta.get("eps_effective"))
    if family.name == "gaussian":
        out["C"], out["C_upper"] = brownian_constant()
    _write_json(cfg.summary, out)
    print(dumps(out))
    return EXIT_OK


def cmd_hedge_check(cfg, threads):
    family = _family(cfg)
    paths = read_paths_csv(cfg.paths, cfg.T) if cfg.paths else _simulate(cfg, threads)
    rep = certify_ensemble(paths, family, dual_functions(family), tolerance=cfg.tolerance)
    out = rep.to_dict()
    try:
        out["bound"] = tv_lower_bound(family, paths.t0, cfg.T)
    except NoDispersion:
        out["bound"] = None
    _write_json(cfg.summary, out)
    print(dumps(out))
    return EXIT_OK if rep.violations == 0 else EXIT_CHECK


def _dump_csv(path, header, cols):
    fh = open(path, "w") if path else sys.stdout
    try:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, np.column_stack(cols), fmt=FMT, delimiter=",")
    finally:
        if path:
            fh.close()


def _x_grid(cfg, lo, hi):
    if cfg.x_grid:
        a, b, n = cfg.x_grid
        return np.linspace(a, b, int(n))
    return np.linspace(lo, hi, cfg.grid + 2)[1:-1]


def cmd_transport_dump(cfg, threads):
    family = _family(cfg)
    t = cfg.t
    kind = cfg.kernel
    lo, hi = family.x_range(t)
    if kind == "hp" or family.name == "atom-mix":
        kern = HPFamilyKernels(family)
        if family.name == "atom-mix":
            x = np.zeros(1)
        else:
            x = _x_grid(cfg, *(float(v) for v in family.gamma_support(t)))
        z = np.linspace(lo, hi, cfg.grid)
        rows = [(np.full(z.size, xi), z, kern.kernel(t, xi).cdf(z)) for xi in x]
        cols = [np.concatenate(c) for c in zip(*rows)]
        header = ["x", "z", "cdf"]
    elif kind in ("hk", "closed-form"):
        x = _x_grid(cfg, *(float(v) for v in family.gamma_support(t)))
        a, b = hk_bounds(family, t, x)
        cols, header = [x, a, b, (x - a) / (b - a)], ["x", "a", "b", "p_up"]
    else:
        raise ConfigError(f"transport-dump has no {kind!r} kernel")
    _dump_csv(cfg.out, header, cols)
    check_kernel = "hp" if kind == "hp" else "hk"
    rep = pushforward_check(family, t, kernel=check_kernel)
    out = {"t": t, "kernel": kind, "l1": rep.l1, "continuous_l1": rep.continuous_l1,
           "atom_error": rep.atom_error, "max_mean_error": rep.max_mean_error,
           "max_mass_error": rep.max_mass_error}
    _write_json(cfg.summary, out)
    if cfg.out:
        print(dumps(out))
    ok = rep.l1 <= 1e-4 and rep.max_mean_error <= 1e-7
    return EXIT_OK if ok else EXIT_CHECK


def cmd_psi_dump(cfg, threads):
    family = _family(cfg)
    t = cfg.t
    lo, hi = family.x_range(t)
    if family.name in ("uniform", "atom-mix"):
        x = np.linspace(lo, hi, cfg.grid)
        if family.name == "uniform":
            s = float(family._s(t))
            th, psi = uniform_Theta(x / s), s * uniform_Psi(x / s)
            inner = np.abs(x) < s
            a, b = np.where(inner, -s, np.nan), np.where(inner, s, np.nan)
        else:
            th, psi = np.zeros(x.size), np.abs(x)
            inner = x == 0
            a = b = np.full(x.size, np.nan)
    else:
        tab = build_psi_theta(family, t)
        outer = np.r_[np.linspace(lo, tab.left, cfg.grid // 2, endpoint=False),
                      np.linspace(hi, tab.right, cfg.grid // 2, endpoint=False)[::-1]]
        x = np.sort(np.r_[tab.knots, outer])
        psi, th, _ = tab.evaluate(x)
        inner = (x > tab.left) & (x < tab.right)
        a = np.full(x.size, np.nan)
        b = np.full(x.size, np.nan)
        if inner.any():
            a[inner], b[inner] = hk_bounds(family, t, x[inner])
    _dump_csv(cfg.out, ["x", "a", "b", "theta", "psi", "inner"],
              [x, a, b, th, psi, inner.astype(float)])
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "check-marginals": cmd_check_marginals,
    "tv": cmd_tv,
    "hedge-check": cmd_hedge_check,
    "transport-dump": cmd_transport_dump,
    "psi-dump": cmd_psi_dump,
}


def build_parser():
    p = argparse.ArgumentParser(prog="mimic",
                                description="Pure-jump martingales with prescribed marginals.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", help="CSV output (paths or dump)")
        s.add_argument("--summary", help="JSON summary output")
        s.add_argument("--threads", type=int, help="worker processes (default: $MIMIC_THREADS or 1)")
        s.add_argument("--seed-override", type=int, help="replace the configured seed")
        if name in ("hedge-check", "check-marginals"):
            s.add_argument("--paths", help="paths.csv to check instead of simulating")
        if name in ("transport-dump", "psi-dump"):
            s.add_argument("--t", type=float, help="time slice")
            s.add_argument("--family", help="family name (overrides the config)")
        if name == "transport-dump":
            s.add_argument("--kernel", choices=["hk", "hp", "closed-form"])
            s.add_argument("--x-grid", dest="x_grid", help="source points as a:b:n")
    return p


def parse_x_grid(text):
    try:
        a, b, n = text.split(":")
        grid = [float(a), float(b), int(n)]
    except ValueError:
        raise ConfigError(f"--x-grid must look like a:b:n, got {text!r}") from None
    if grid[2] < 1 or not grid[0] <= grid[1]:
        raise ConfigError("--x-grid needs a <= b and n >= 1")
    return grid


def resolve_threads(flag, cfg):
    if flag is not None:
        return flag
    env = os.environ.get("MIMIC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"MIMIC_THREADS must be an integer, got {env!r}") from None
    return cfg.threads or 1


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        for key in ("out", "summary", "paths", "t", "family", "kernel"):
            v = getattr(args, key, None)
            if v is not None:
                setattr(cfg, key, v)
        if getattr(args, "x_grid", None):
            cfg.x_grid = parse_x_grid(args.x_grid)
        if args.seed_override is not None:
            cfg.seed = args.seed_override
        cfg.validate()
        threads = resolve_threads(args.threads, cfg)
        return COMMANDS[args.command](cfg, threads)
    except INVALID as exc:
        print(f"mimic: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
