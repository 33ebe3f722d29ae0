"""Pure-jump martingale paths driven by a Poisson point process.

Each path owns a counter-based RNG stream keyed by (seed, path index), so
the ensemble is bit-identical however paths are batched or distributed
over workers. Within a batch the event loop is vectorised over paths.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import stats

from . import numerics
from .errors import ConfigError, UnboundedRate, UnsupportedExample
from .families import get_family
from .transport import jump_sampler

EPS_FLOOR = 1e-4
ZERO_CUTOFF = 1e-12


@dataclass(frozen=True)
class PoissonEvent:
    s: float
    h: float
    u: float


@dataclass
class PathSkeleton:
    """Piecewise-constant cadlag path: x0 on [t0, first jump), then jump values."""

    t0: float
    x0: float
    jumps: list = field(default_factory=list)  # [(time, new value)]

    def value_at(self, t):
        v = self.x0
        for s, y in self.jumps:
            if s <= t:
                v = y
            else:
                break
        return v

    def validate(self, T=None):
        prev_t, prev_v = self.t0, self.x0
        for s, y in self.jumps:
            if not s > prev_t:
                raise ValueError("jump times must be strictly increasing after t0")
            if y == prev_v:
                raise ValueError("zero jumps are not stored")
            if T is not None and s > T:
                raise ValueError("jump after the horizon")
            prev_t, prev_v = s, y


@dataclass
class SimConfig:
    family: str = "gaussian"
    family_params: dict = field(default_factory=dict)
    kernel: str = "hk"            # hk | hp | closed-form | reverse
    eps: float = 0.01
    T: float = 1.0
    n_paths: int = 10000
    seed: int = 0
    checkpoints: tuple = ()
    freeze: bool = False          # negative control: no jumps at all
    chunk: int = 20000

    def validate(self):
        if not (0 <= self.eps < self.T):
            raise ConfigError(f"need 0 <= eps < T, got eps={self.eps}, T={self.T}")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.kernel not in ("hk", "hp", "closed-form", "reverse"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for c in self.checkpoints:
            if not (self.eps <= c <= self.T):
                raise ConfigError(f"checkpoint {c} outside [eps, T]")
        return self


@dataclass
class PathSet:
    """A batch of skeletons in flat arrays (jumps sorted by path, then time)."""

    t0: float
    T: float
    x0: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.x0.size

    @property
    def n_jumps(self):
        return np.diff(self.offsets)

    @property
    def path_ids(self):
        return np.repeat(np.arange(len(self)), self.n_jumps)

    def path(self, i):
        a, b = self.offsets[i], self.offsets[i + 1]
        return PathSkeleton(self.t0, float(self.x0[i]),
                            list(zip(self.times[a:b].tolist(), self.values[a:b].tolist())))

    def previous_values(self):
        """Value just before each stored jump."""
        prev = np.empty_like(self.values)
        if prev.size:
            prev[1:] = self.values[:-1]
            first = self.offsets[:-1][self.n_jumps > 0]
            prev[first] = self.x0[self.n_jumps > 0]
        return prev

    def values_at(self, t):
        out = self.x0.copy()
        m = self.times <= t
        if m.any():
            pid = self.path_ids[m]
            vals = self.values[m]
            # last qualifying jump per path (arrays are sorted by path then time)
            last = np.r_[pid[1:] != pid[:-1], True]
            out[pid[last]] = vals[last]
        return out

    def tv(self):
        """Sum of absolute jump sizes per path."""
        d = np.abs(self.values - self.previous_values())
        return np.bincount(self.path_ids, weights=d, minlength=len(self))

    @classmethod
    def from_skeletons(cls, paths, T, meta=None):
        x0 = np.array([p.x0 for p in paths], dtype=float)
        n = np.array([len(p.jumps) for p in paths], dtype=int)
        offsets = np.r_[0, np.cumsum(n)]
        times = np.array([s for p in paths for s, _ in p.jumps], dtype=float)
        values = np.array([y for p in paths for _, y in p.jumps], dtype=float)
        t0 = paths[0].t0 if paths else 0.0
        return cls(t0, T, x0, offsets, times, values, dict(meta or {}))

    @classmethod
    def concat(cls, parts):
        x0 = np.concatenate([p.x0 for p in parts])
        n = np.concatenate([p.n_jumps for p in parts])
        return cls(parts[0].t0, parts[0].T, x0, np.r_[0, np.cumsum(n)],
                   np.concatenate([p.times for p in parts]),
                   np.concatenate([p.values for p in parts]), dict(parts[0].meta))


def path_rng(seed, index):
    return np.random.Generator(np.random.Philox(key=numerics.hash64(seed, index)))


def sample_events(eps, T, kbar, rng):
    """Events of the Poisson process on (eps, T] x (0, kbar] x (0, 1)."""
    if not np.isfinite(kbar):
        raise UnboundedRate("rate bound is infinite on the interval")
    if kbar <= 0 or T <= eps:
        return []
    n = rng.poisson(kbar * (T - eps))
    s = np.sort(T - (T - eps) * rng.random(n))
    h = kbar * (1.0 - rng.random(n))
    u = rng.random(n)
    return [PoissonEvent(float(a), float(b), float(c)) for a, b, c in zip(s, h, u)]


def _draw(seed, index, eps, T, kbar):
    """Initial uniform and event arrays of one path, in a fixed draw order."""
    rng = path_rng(seed, index)
    u0 = rng.random()
    if kbar <= 0:
        return u0, np.empty(0), np.empty(0), np.empty(0)
    n = rng.poisson(kbar * (T - eps))
    s = np.sort(T - (T - eps) * rng.random(n))
    h = kbar * (1.0 - rng.random(n))
    u = rng.random(n)
    return u0, s, h, u


def effective_start(family, eps):
    """Start time actually simulated from, and whether eps was floored."""
    if eps > 0:
        return eps, False
    if np.isfinite(family.rate_bound(0.0)):
        return 0.0, False
    if family.self_similar:
        return EPS_FLOOR, True
    raise UnboundedRate(f"{family.name}: K(t) diverges at 0; use eps > 0")


def _initial_values(family, t, u):
    if t == 0 and family.name != "atom-mix":
        return np.full(u.shape, family.mean)
    return np.asarray(family.ppf(t, u), dtype=float)


def _simulate_range(cfg, start, stop):
    family = get_family(cfg.family, **cfg.family_params)
    t0, _ = effective_start(family, cfg.eps)
    T = cfg.T
    kbar = 0.0 if cfg.freeze else family.kbar(t0, T)
    if not np.isfinite(kbar):
        raise UnboundedRate("rate bound is infinite on the interval")
    sampler = None if cfg.freeze else jump_sampler(family, cfg.kernel)
    idx = range(start, stop)
    draws = [_draw(cfg.seed, i, t0, T, kbar) for i in idx]
    N = len(draws)
    u0 = np.array([d[0] for d in draws])
    x = _initial_values(family, t0, u0)
    x0 = x.copy()
    n = np.array([d[1].size for d in draws], dtype=int)
    maxn = int(n.max()) if N else 0
    S = np.full((N, maxn), np.nan)
    H = np.full((N, maxn), np.inf)
    U = np.zeros((N, maxn))
    for i, d in enumerate(draws):
        S[i, :n[i]], H[i, :n[i]], U[i, :n[i]] = d[1], d[2], d[3]
    jp, jt, jv = [], [], []
    for k in range(maxn):
        live = np.nonzero(k < n)[0]
        if live.size == 0:
            break
        s = S[live, k]
        rate = family.rate(s, x[live])
        acc = live[H[live, k] <= rate]
        if acc.size == 0:
            continue
        y = sampler(S[acc, k], x[acc], U[acc, k])
        moved = y != x[acc]
        acc, y = acc[moved], y[moved]
        jp.append(acc)
        jt.append(S[acc, k])
        jv.append(y)
        x[acc] = y
    if jp:
        jp, jt, jv = np.concatenate(jp), np.concatenate(jt), np.concatenate(jv)
        order = np.lexsort((jt, jp))
        jp, jt, jv = jp[order], jt[order], jv[order]
    else:
        jp, jt, jv = (np.empty(0, dtype=int), np.empty(0), np.empty(0))
    counts = np.bincount(jp, minlength=N)
    return PathSet(t0, T, x0, np.r_[0, np.cumsum(counts)], jt, jv,
                   {"events": int(n.sum()), "kbar": kbar})


def simulate(cfg, threads=None):
    """Simulate cfg.n_paths paths; identical output for any thread count."""
    cfg.validate()
    family = get_family(cfg.family, **cfg.family_params)
    if cfg.kernel == "reverse":
        return reverse_time_paths(family, cfg.T, cfg.n_paths, cfg.seed)
    t0, floored = effective_start(family, cfg.eps)
    if threads is None:
        threads = int(os.environ.get("MIMIC_THREADS", "1") or 1)
    bounds = [(a, min(a + cfg.chunk, cfg.n_paths)) for a in range(0, cfg.n_paths, cfg.chunk)]
    if threads > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_simulate_range, [cfg] * len(bounds),
                                [a for a, _ in bounds], [b for _, b in bounds]))
    else:
        parts = [_simulate_range(cfg, a, b) for a, b in bounds]
    ps = PathSet.concat(parts)
    ps.meta = {"eps_requested": cfg.eps, "eps_effective": t0, "eps_floored": floored,
               "kbar": parts[0].meta["kbar"], "events": sum(p.meta["events"] for p in parts),
               "family": cfg.family, "kernel": cfg.kernel}
    return ps


def simulate_path(cfg, path_index):
    """The single path ``path_index`` of the ensemble described by cfg."""
    cfg.validate()
    if cfg.kernel == "reverse":
        family = get_family(cfg.family, **cfg.family_params)
        return reverse_time_simulate(family.name, cfg.T, path_rng(cfg.seed, path_index))
    return _simulate_range(cfg, path_index, path_index + 1).path(0)


# -- time reversal ------------------------------------------------------------

def reverse_time_simulate(example, T, rng):
    """Exact path on [0, T] built backwards from X_T ~ mu_T.

    atom-mix: X_T = 0 with probability e^{-T} (constant path); otherwise
    X_T ~ U[-1, 1] and the single jump from 0 happens at the forward time
    tau with P(tau <= t) = (1 - e^{-t}) / (1 - e^{-T}).

    uniform: the value x_k is held on [|x_k|, ...); just before time |x_k|
    the path sat at x_{k+1} ~ (c + sgn(x_k) y) / (2 c^2) dy on (-c, c),
    c = |x_k|. Values shrink to 0; the chain stops below 1e-12.
    """
    if example == "atom-mix":
        u = rng.random()
        if u < math.exp(-T):
            return PathSkeleton(0.0, 0.0, [])
        v = 2 * rng.random() - 1
        tau = -math.log1p(-rng.random() * -math.expm1(-T))
        if v == 0.0:
            return PathSkeleton(0.0, 0.0, [])
        return PathSkeleton(0.0, 0.0, [(tau, v)])
    if example == "uniform":
        xk = T * (2 * rng.random() - 1)
        back = []
        while abs(xk) >= ZERO_CUTOFF:
            c = abs(xk)
            back.append((c, xk))
            v = 2 * c * math.sqrt(rng.random()) - c
            xk = v if xk > 0 else -v
        return PathSkeleton(0.0, 0.0, back[::-1])
    raise UnsupportedExample(f"no time-reversed dynamics for {example!r}")


def reverse_time_paths(family, T, n, seed):
    if family.name == "uniform" and getattr(family, "alpha", 1.0) != 1.0:
        raise UnsupportedExample("time reversal is available for the alpha = 1 uniform family")
    paths = [reverse_time_simulate(family.name, T, path_rng(seed, i)) for i in range(n)]
    ps = PathSet.from_skeletons(paths, T)
    ps.meta = {"eps_requested": 0.0, "eps_effective": 0.0, "eps_floored": False,
               "family": family.name, "kernel": "reverse"}
    return ps


# -- statistics ---------------------------------------------------------------

def ks_statistic(sample, cdf, atoms=()):
    """Two-sided KS distance allowing atoms in the reference law."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    F_left = F.copy()
    for loc, mass in atoms:
        F_left = F_left - mass * (x == loc)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F_left - (i - 1) / n)))


def ks_critical(n, level=0.99):
    return float(stats.kstwo.ppf(level, n))


@dataclass
class CheckpointStats:
    t: float
    ks: float
    ks_critical: float
    ks_pass: bool
    mean: float
    mean_se: float
    mean_pass: bool
    mart_mean: float
    mart_se: float
    mart_pass: bool
    mart_bins_max_z: float


@dataclass
class SimReport:
    n_paths: int
    checkpoints: list
    jumps_mean: float
    jumps_se: float
    jumps_expected: Optional[float]
    eps_effective: float
    eps_floored: bool

    @property
    def passed(self):
        return all(c.ks_pass and c.mean_pass and c.mart_pass for c in self.checkpoints)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def expected_jump_count(family, eps, T):
    """int_eps^T m(t) dt, the gamma mass swept per path."""
    return numerics.quad(lambda t: family.m(t), eps, T, epsrel=1e-10)


def marginal_report(paths, family, checkpoints, bins=10):
    n = len(paths)
    XT = paths.values_at(paths.T)
    out = []
    for t in checkpoints:
        X = paths.values_at(t)
        ks = ks_statistic(X, lambda y: family.cdf(t, y), family.atoms(t))
        crit = ks_critical(n)
        mean = float(X.mean())
        se = float(X.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
        inc = XT - X
        ms = float(inc.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
        mm = float(inc.mean())
        # conditional martingale check on quantile bins of X_t
        zmax = 0.0
        edges = np.quantile(X, np.linspace(0, 1, bins + 1))
        which = np.clip(np.searchsorted(edges, X, side="right") - 1, 0, bins - 1)
        for b in range(bins):
            sel = inc[which == b]
            if sel.size > 1:
                sd = sel.std(ddof=1)
                if sd > 0:
                    zmax = max(zmax, abs(sel.mean()) / (sd / math.sqrt(sel.size)))
                elif abs(sel.mean()) > 0:
                    zmax = np.inf
        out.append(CheckpointStats(
            float(t), ks, crit, ks <= crit, mean, se,
            abs(mean - family.mean) <= 4 * se if se > 0 else mean == family.mean,
            mm, ms, (abs(mm) <= 4 * ms) if ms > 0 else mm == 0, float(zmax)))
    nj = paths.n_jumps
    eps = paths.meta.get("eps_effective", paths.t0)
    try:
        finite = eps > 0 or np.isfinite(family.rate_bound(0.0))
        expected = expected_jump_count(family, eps, paths.T) if finite else None
    except Exception:
        expected = None
    return SimReport(n, out, float(nj.mean()), float(nj.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                     expected, float(eps), bool(paths.meta.get("eps_floored", False)))
