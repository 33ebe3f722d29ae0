"""Pathwise sub-hedge: TV(Z) >= psi(T, Z_T) - psi(eps, Z_eps) - int psi_dot du - int theta dZ.

For piecewise-constant paths the trading integral is the finite sum
sum theta(s, Z_{s-}) dZ_s (left limits, predictable), and the time-decay
integral over a constancy interval [u, v] at level x is psi(v, x) - psi(u, x).
The slack TV - rhs then telescopes to sum_jumps L_s(Z_{s-}, Z_s) >= 0.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import integrate

from .errors import NonFiniteVariationInput
from .variation import dual_functions

MAX_JUMPS = 10 ** 6


@dataclass
class HedgeDecomposition:
    terminal: float
    initial: float
    decay: float
    trading: float
    rhs: float
    tv: float
    slack: float


def _psi_theta(dual, t, x, mean):
    """(psi(t, x), theta(t, x)) with the t = 0 convention psi(0, mean) = 0.

    Duals exposing ``evaluate(t, x)`` get a single batched call.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    t, x = np.broadcast_arrays(t, x)
    psi = np.zeros(x.shape)
    th = np.zeros(x.shape)
    zero = t == 0
    if np.any(zero & (x != mean)):
        raise ValueError("a path started at t = 0 must start at the mean")
    live = ~zero
    if np.any(live):
        if hasattr(dual, "evaluate"):
            psi[live], th[live] = dual.evaluate(t[live], x[live])
        else:
            psi[live], th[live] = dual.psi(t[live], x[live]), dual.theta(t[live], x[live])
    return psi, th


def _psi(dual, t, x, mean):
    return _psi_theta(dual, t, x, mean)[0]


def _check_path(path, T, max_jumps):
    if len(path.jumps) > max_jumps:
        raise NonFiniteVariationInput(
            f"{len(path.jumps)} jumps: treated as a path without finite variation")
    vals = [path.x0] + [y for _, y in path.jumps]
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteVariationInput("path values must be finite")
    times = [path.t0] + [s for s, _ in path.jumps]
    if any(b <= a for a, b in zip(times[:-1], times[1:])) or times[-1] > T:
        raise NonFiniteVariationInput("jump times must increase strictly inside the horizon")


def subhedge_eval(path, family, eps, T, dual=None, decay="exact", max_jumps=MAX_JUMPS):
    """Both sides of the sub-hedging inequality for one path on [eps, T].

    decay="exact" integrates psi_dot on each constancy interval by the
    difference of psi at its ends; decay="quadrature" integrates psi_dot
    numerically (used as a cross-check).
    """
    _check_path(path, T, max_jumps)
    if path.t0 != eps:
        raise ValueError("path must start at eps")
    dual = dual if dual is not None else dual_functions(family)
    mean = family.mean
    times = np.array([eps] + [s for s, _ in path.jumps] + [T])
    levels = np.array([path.x0] + [y for _, y in path.jumps])
    terminal = float(_psi(dual, T, levels[-1], mean))
    initial = float(_psi(dual, eps, levels[0], mean))
    if decay == "exact":
        d = _psi(dual, times[1:], levels, mean) - _psi(dual, times[:-1], levels, mean)
        decay_total = float(np.sum(d))
    else:
        decay_total = 0.0
        for u, v, x in zip(times[:-1], times[1:], levels):
            if v > u and (u > 0 or x != mean):
                decay_total += integrate.quad(lambda s: float(dual.psi_dot(s, x)), u, v,
                                              epsabs=1e-12, epsrel=1e-10, limit=200)[0]
    if path.jumps:
        js = times[1:-1]
        prev, new = levels[:-1], levels[1:]
        trading = float(np.sum(dual.theta(js, prev) * (new - prev)))
        tv = float(np.sum(np.abs(new - prev)))
    else:
        trading, tv = 0.0, 0.0
    rhs = terminal - initial - decay_total - trading
    return HedgeDecomposition(terminal, initial, decay_total, trading, rhs, tv, tv - rhs)


@dataclass
class HedgeReport:
    n_paths: int
    min_slack: float
    violations: int
    mean_slack: float
    slack_se: float
    mean_tv: float
    tv_se: float
    mean_rhs: float
    tolerance: float

    def to_dict(self):
        return asdict(self)


def ensemble_slacks(paths, family, dual=None):
    """Per-path (tv, rhs, slack) arrays for a PathSet, vectorised over jumps."""
    eps, T = paths.t0, paths.T
    dual = dual if dual is not None else dual_functions(family)
    mean = family.mean
    n = len(paths)
    nj = paths.n_jumps
    if np.any(nj > MAX_JUMPS):
        raise NonFiniteVariationInput("path without finite variation in the ensemble")
    if not (np.all(np.isfinite(paths.x0)) and np.all(np.isfinite(paths.values))):
        raise NonFiniteVariationInput("path values must be finite")
    pid = paths.path_ids
    prev = paths.previous_values()
    new = paths.values
    s = paths.times
    XT = paths.values_at(T)
    # decay: each level is held from its start time to the next jump (or T)
    start_t = np.concatenate([np.full(n, eps), s])
    start_x = np.concatenate([paths.x0, new])
    owner = np.concatenate([np.arange(n), pid])
    # first level ends at the first jump, each jump level at the next jump
    has = nj > 0
    first = paths.offsets[:-1]
    end_first = np.where(has, s[np.minimum(first, max(s.size - 1, 0))] if s.size else T, T)
    nxt = np.r_[s[1:], T] if s.size else np.empty(0)
    last_of_path = np.r_[pid[1:] != pid[:-1], True] if s.size else np.empty(0, dtype=bool)
    end_jump = np.where(last_of_path, T, nxt)
    end_t = np.concatenate([end_first, end_jump])
    # one batched dual evaluation: terminal, start and end of every level, pre-jump points
    m = start_t.size
    pts_t = np.concatenate([np.full(n, T), start_t, end_t, s])
    pts_x = np.concatenate([XT, start_x, start_x, prev])
    psi, th = _psi_theta(dual, pts_t, pts_x, mean)
    terminal = psi[:n]
    initial = psi[n:2 * n]
    d = psi[n + m:n + 2 * m] - psi[n:n + m]
    decay = np.bincount(owner, weights=d, minlength=n)
    if s.size:
        trade = np.bincount(pid, weights=th[n + 2 * m:] * (new - prev), minlength=n)
        tv = np.bincount(pid, weights=np.abs(new - prev), minlength=n)
    else:
        trade = np.zeros(n)
        tv = np.zeros(n)
    rhs = terminal - initial - decay - trade
    return tv, rhs, tv - rhs


def certify_ensemble(paths, family, dual=None, tolerance=1e-6):
    tv, rhs, slack = ensemble_slacks(paths, family, dual)
    n = tv.size
    se = lambda v: float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return HedgeReport(n, float(slack.min()), int(np.sum(slack < -tolerance)),
                       float(slack.mean()), se(slack), float(tv.mean()), se(tv),
                       float(rhs.mean()), tolerance)
