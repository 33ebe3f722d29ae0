"""Dual functions psi, theta of the total-variation problem and TV bounds.

For a dispersive family the pair (psi_t, theta_t) is built from the binomial
kernel targets a_t, b_t:

    theta_t(x) = int_{x0}^x 2 / (b - a) dz
    psi_t(x)   = int_{x0}^x (2x - a - b) / (b - a) dz     (x inside E_t)

and extended to the tails through a_t^{-1}, b_t^{-1}. With these,
L_t(x, y) = |y - x| + psi(x) + theta(x)(y - x) - psi(y) is non-negative and
vanishes at y in {a(x), x, b(x)}.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import numerics
from .errors import NoDispersion
from .transport import hk_bounds, _hk_inverse, _gamma_nodes

C_UPPER = math.sqrt(32 / math.pi) * math.exp(-0.5)
# Far-tail cutoff, relative to the width of E_t. Within this distance of an
# end of E_t the targets a_t, b_t lose accuracy to cancellation, so beyond
# a_t(right - cutoff) psi continues linearly with the limiting slope
# theta(right) - 1 and theta is frozen at theta(right) (mirrored on the other
# side). theta is increasing, so this keeps psi below its exact extension and
# L >= 0 still holds everywhere; only attainment on ~1e-10 of lambda's mass
# is given up.
TAIL_REACH = 3e-3


# -- closed forms -------------------------------------------------------------

def uniform_Psi(z):
    return np.minimum(np.square(z), 1.0)


def uniform_Theta(z):
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1, z, 0.0)


def uniform_dPsi(z):
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1, 2 * z, 0.0)


# -- tables -------------------------------------------------------------------

@dataclass
class PsiThetaTable:
    """psi_t and theta_t of one time slice, as Hermite splines on E_t plus tails."""

    family: object = field(repr=False)
    t: float
    x0: float
    knots: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)        # kernel targets at interior knots
    b: np.ndarray = field(repr=False)
    theta_knots: np.ndarray = field(repr=False)
    psi_knots: np.ndarray = field(repr=False)
    _theta: object = field(repr=False, default=None)
    _cum: object = field(repr=False, default=None)
    # far-tail continuation: (cut point, psi there, frozen theta) per side
    tails: tuple = field(repr=False, default=())

    @property
    def left(self):
        return self.knots[0]

    @property
    def right(self):
        return self.knots[-1]

    def _inner_theta(self, x):
        return self._theta(x)

    def _inner_psi(self, x):
        # psi = x theta - int_{x0}^x (a + b)/(b - a)
        return x * self._theta(x) - self._cum(x)

    def _inner_dpsi(self, x):
        a, b = hk_bounds(self.family, self.t, x)
        return self._theta(x) + (2 * x - a - b) / (b - a)

    def _preimage(self, x, side):
        # warm start from the stored (decreasing) target columns
        col = self.a if side == 0 else self.b
        guess = np.interp(x, col[::-1], self.knots[1:-1][::-1])
        # psi is stationary in the preimage, so a loose residual tolerance is harmless
        return _hk_inverse(self.family, self.t, x, side, x0=guess, reach=TAIL_REACH, ftol=1e-9)

    def evaluate(self, x):
        """(psi, theta, psi') at points x (any shape)."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        psi = np.empty(flat.size)
        th = np.empty(flat.size)
        dpsi = np.empty(flat.size)
        inner = (flat >= self.left) & (flat <= self.right)
        if inner.any():
            xi = flat[inner]
            psi[inner] = self._inner_psi(xi)
            th[inner] = self._inner_theta(xi)
            mid = (xi > self.left) & (xi < self.right)
            d = np.empty(xi.size)
            d[mid] = self._inner_dpsi(xi[mid]) if mid.any() else 0.0
            # limits at the ends: (2x - a - b)/(b - a) -> -1 at the left, +1 at the right
            d[~mid] = th[inner][~mid] + np.where(xi[~mid] <= self.left, -1.0, 1.0)
            dpsi[inner] = d
        for side, sel in ((0, flat < self.left), (1, flat > self.right)):
            if not sel.any():
                continue
            sign = -1.0 if side == 0 else 1.0
            cut, psi_cut, th_lim = self.tails[side]
            z = flat[sel]
            far = (z < cut) if side == 0 else (z > cut)
            ps, ts, ds = np.empty(z.size), np.empty(z.size), np.empty(z.size)
            near = ~far
            if near.any():
                xp = self._preimage(z[near], side)
                p0, t0 = self._inner_psi(xp), self._inner_theta(xp)
                ps[near] = p0 + np.abs(xp - z[near]) * (1 + sign * t0)
                ts[near] = t0
                ds[near] = t0 + sign
            ps[far] = psi_cut + (th_lim + sign) * (z[far] - cut)
            ts[far] = th_lim
            ds[far] = th_lim + sign
            psi[sel], th[sel], dpsi[sel] = ps, ts, ds
        return psi.reshape(x.shape), th.reshape(x.shape), dpsi.reshape(x.shape)

    def psi(self, x):
        return self.evaluate(x)[0]

    def theta(self, x):
        return self.evaluate(x)[1]

    def L(self, x, y):
        px, tx, _ = self.evaluate(x)
        py = self.psi(y)
        return np.abs(y - x) + px + tx * (y - x) - py


def _cheb_knots(lo, hi, n):
    k = np.arange(n + 1)
    return 0.5 * (lo + hi) - 0.5 * (hi - lo) * np.cos(np.pi * k / n)


def _table_pieces(family, t, x0, n, order=8):
    lg, rg = (float(v) for v in family.gamma_support(t))
    knots = _cheb_knots(lg, rg, n)
    knots[0], knots[-1] = lg, rg
    xg, wg = numerics.gauss_legendre(order)
    half = 0.5 * np.diff(knots)
    mid = 0.5 * (knots[1:] + knots[:-1])
    nodes = mid[:, None] + half[:, None] * xg[None, :]
    inner = knots[1:-1]
    pts = np.concatenate([nodes.ravel(), inner])
    a, b = hk_bounds(family, t, pts)
    an, bn = a[:nodes.size].reshape(nodes.shape), b[:nodes.size].reshape(nodes.shape)
    ak, bk = a[nodes.size:], b[nodes.size:]
    w = half[:, None] * wg[None, :]
    dth = np.r_[0.0, 2 / (bk - ak), 0.0]
    dcum = np.r_[1.0, (ak + bk) / (bk - ak), -1.0]
    th = np.r_[0.0, np.cumsum((w * 2 / (bn - an)).sum(axis=1))]
    cum = np.r_[0.0, np.cumsum((w * (an + bn) / (bn - an)).sum(axis=1))]
    th_s = CubicHermiteSpline(knots, th, dth)
    cum_s = CubicHermiteSpline(knots, cum, dcum)
    th0, cum0 = float(th_s(x0)), float(cum_s(x0))
    th_s = CubicHermiteSpline(knots, th - th0, dth)
    cum_s = CubicHermiteSpline(knots, cum - cum0, dcum)
    return knots, ak, bk, th_s, cum_s


def build_psi_theta(family, t, x0=None, n=128, tol=1e-7, max_refine=5):
    """Tabulate psi_t, theta_t; the grid is doubled until knot values settle to ``tol``."""
    if not family.dispersive:
        raise NoDispersion(f"{family.name} does not satisfy the dispersion assumption")
    x0 = family.mean if x0 is None else float(x0)
    lg, rg = (float(v) for v in family.gamma_support(t))
    if not lg < x0 < rg:
        raise NoDispersion("anchor must lie inside the central interval")
    prev = None
    for _ in range(max_refine + 1):
        knots, ak, bk, th_s, cum_s = _table_pieces(family, t, x0, n)
        probe = _cheb_knots(lg, rg, 64)
        vals = np.concatenate([th_s(probe), probe * th_s(probe) - cum_s(probe)])
        if prev is not None and np.max(np.abs(vals - prev)) < tol:
            break
        prev = vals
        n *= 2
    tab = PsiThetaTable(family, float(t), x0, knots, ak, bk, th_s(knots),
                        knots * th_s(knots) - cum_s(knots))
    tab._theta, tab._cum = th_s, cum_s
    w = TAIL_REACH * (rg - lg)
    ends = np.array([rg - w, lg + w])
    a_e, b_e = hk_bounds(family, t, ends)
    tails = []
    for side, (xe, ze, lim) in enumerate(((ends[0], a_e[0], rg), (ends[1], b_e[1], lg))):
        sign = -1.0 if side == 0 else 1.0
        p0, t0 = tab._inner_psi(xe), tab._inner_theta(xe)
        tails.append((float(ze), float(p0 + abs(xe - ze) * (1 + sign * t0)), float(th_s(lim))))
    tab.tails = tuple(tails)
    return tab


class UniformDual:
    """psi_t(x) = s Psi(x/s), theta_t(x) = Theta(x/s), s = t^alpha."""

    def __init__(self, family):
        self.family = family
        self.alpha = family.alpha

    def psi(self, t, x):
        s = np.asarray(self.family._s(t))
        return s * uniform_Psi(np.asarray(x) / s)

    def theta(self, t, x):
        return uniform_Theta(np.asarray(x) / np.asarray(self.family._s(t)))

    def psi_dot(self, t, x):
        s = np.asarray(self.family._s(t))
        z = np.asarray(x) / s
        return self.family._sdot(t) * (uniform_Psi(z) - z * uniform_dPsi(z))


class AtomMixDual:
    """psi_t(x) = |x|, theta = 0: L(x, y) = |y-x| + |x| - |y| >= 0, zero whenever x = 0."""

    def __init__(self, family):
        self.family = family

    def psi(self, t, x):
        return np.abs(np.asarray(x, dtype=float)) + 0 * np.asarray(t)

    def theta(self, t, x):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)

    def psi_dot(self, t, x):
        return self.theta(t, x)


class SelfSimilarDual:
    """psi_t(x) = t^alpha Psi(x t^-alpha), theta_t(x) = Theta(x t^-alpha) from one t = 1 table."""

    def __init__(self, family, table=None):
        self.family = family
        self.alpha = family.alpha
        self.table = table if table is not None else build_psi_theta(family, 1.0)

    def psi(self, t, x):
        s = np.asarray(t, dtype=float) ** self.alpha
        return s * self.table.psi(np.asarray(x) / s)

    def theta(self, t, x):
        s = np.asarray(t, dtype=float) ** self.alpha
        return self.table.theta(np.asarray(x) / s)

    def psi_dot(self, t, x):
        t = np.asarray(t, dtype=float)
        s = t ** self.alpha
        z = np.asarray(x) / s
        P, _, dP = self.table.evaluate(z)
        return self.alpha * t ** (self.alpha - 1) * (P - z * dP)


class TabulatedDual:
    """Tables for families without a scaling law.

    Without ``grid`` a table is built at every requested t (cached) and
    psi_dot is a central difference with step ``fd_step``. With a time grid,
    psi and theta are Lagrange-interpolated in t over ``order + 1``
    neighbouring grid tables and psi_dot is the derivative of that
    interpolant. With order 1 (the default), L_t is a convex combination of
    grid L's, so L >= 0 carries over exactly. Higher orders overshoot where x
    crosses the moving ends of E_t, since theta_t(x) has kinks in t there.
    """

    def __init__(self, family, n=128, fd_step=1e-4, grid=None, order=1):
        self.family = family
        self.n = n
        self.h = fd_step
        self.grid = None if grid is None else np.unique(np.asarray(grid, dtype=float))
        self.order = order if self.grid is None else min(order, self.grid.size - 1)
        self._cache = {}

    def table(self, t):
        t = float(t)
        if t not in self._cache:
            self._cache[t] = build_psi_theta(self.family, t, n=self.n)
        return self._cache[t]

    def _stencil(self, t):
        g, m = self.grid, self.order + 1
        k = np.clip(np.searchsorted(g, t, side="right") - 1, 0, g.size - 2)
        return np.clip(k - (m // 2 - 1), 0, g.size - m)

    def _weights(self, t, first, deriv=False):
        g, m = self.grid, self.order + 1
        nodes = g[first[:, None] + np.arange(m)[None, :]]
        w = np.ones((t.size, m))
        dw = np.zeros((t.size, m))
        for j in range(m):
            for i in range(m):
                if i == j:
                    continue
                den = nodes[:, j] - nodes[:, i]
                # product rule for the derivative of the Lagrange basis
                dw[:, j] = dw[:, j] * (t - nodes[:, i]) / den + w[:, j] / den
                w[:, j] *= (t - nodes[:, i]) / den
        return dw if deriv else w

    def _apply(self, t, x, fn, deriv=False):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        shape = x.shape
        t, x = t.ravel(), x.ravel()
        out = np.zeros(t.size)
        if self.grid is None:
            for tv in np.unique(t):
                m = t == tv
                out[m] = fn(self.table(tv), x[m])
            return out.reshape(shape)
        g = self.grid
        if np.any((t < g[0]) | (t > g[-1])):
            raise ValueError("time outside the table grid")
        first = self._stencil(t)
        w = self._weights(t, first, deriv)
        for j in range(self.order + 1):
            idx = first + j
            for kv in np.unique(idx):
                m = idx == kv
                out[m] += w[m, j] * fn(self.table(g[kv]), x[m])
        return out.reshape(shape)

    def psi(self, t, x):
        return self._apply(t, x, lambda tab, y: tab.psi(y))

    def theta(self, t, x):
        return self._apply(t, x, lambda tab, y: tab.theta(y))

    def psi_dot(self, t, x):
        if self.grid is not None:
            return self._apply(t, x, lambda tab, y: tab.psi(y), deriv=True)
        t = np.asarray(t, dtype=float)
        return (self.psi(t + self.h, x) - self.psi(t - self.h, x)) / (2 * self.h)


class PointwiseDual:
    """psi_t and theta_t evaluated at each requested (t, x), with no time grid.

    For every distinct t the integrals of 2/(b - a) and (a + b)/(b - a) are
    accumulated over ``panels`` Gauss-Legendre panels in the angle variable
    x = c - h cos(u) of E_t, which crowds nodes towards the ends where a_t and
    b_t move fastest. A query then adds the partial panel up to its own u.
    Outer points use the kernel preimage and the same far-tail continuation
    as PsiThetaTable. All work is vectorised over the requested points, so
    this is the dual to use for pathwise certificates, where every jump
    happens at its own time and interpolation in t would leave a bias.
    """

    def __init__(self, family, panels=24, order=8, fd_step=1e-4, chunk=2048):
        if not family.dispersive:
            raise NoDispersion(f"{family.name} does not satisfy the dispersion assumption")
        self.family = family
        self.panels = panels
        self.order = order
        self.h = fd_step
        self.chunk = chunk

    def _partial(self, t, c, h, u_from, u_to):
        """(int 2/(b-a), int (a+b)/(b-a)) from u_from to u_to, one panel each."""
        xg, wg = numerics.gauss_legendre(self.order)
        half = 0.5 * (u_to - u_from)
        u = 0.5 * (u_to + u_from)[:, None] + half[:, None] * xg[None, :]
        # keep nodes off the ends of E_t, where the targets are undefined
        u = np.clip(u, 1e-7, np.pi - 1e-7)
        z = c[:, None] - h[:, None] * np.cos(u)
        a, b = hk_bounds(self.family, np.broadcast_to(t[:, None], z.shape), z)
        w = (half[:, None] * wg[None, :]) * h[:, None] * np.sin(u)
        return (w * 2 / (b - a)).sum(axis=1), (w * (a + b) / (b - a)).sum(axis=1)

    def _slices(self, ts):
        """Per-time cumulative panel sums, anchor values and tail continuations."""
        fam, P = self.family, self.panels
        lg, rg = (np.asarray(v, dtype=float) for v in fam.gamma_support(ts))
        c, h = 0.5 * (lg + rg), 0.5 * (rg - lg)
        n = ts.size
        edges = np.linspace(0.0, np.pi, P + 1)
        rep = lambda v: np.repeat(v, P)
        d_th, d_cum = self._partial(rep(ts), rep(c), rep(h),
                                    np.tile(edges[:-1], n), np.tile(edges[1:], n))
        th_e = np.zeros((n, P + 1))
        cum_e = np.zeros((n, P + 1))
        th_e[:, 1:] = np.cumsum(d_th.reshape(n, P), axis=1)
        cum_e[:, 1:] = np.cumsum(d_cum.reshape(n, P), axis=1)
        sl = dict(t=ts, lg=lg, rg=rg, c=c, h=h, th_e=th_e, cum_e=cum_e,
                  th0=np.zeros(n), cum0=np.zeros(n))
        x0 = np.full(n, fam.mean)
        sl["th0"], sl["cum0"] = self._inner(sl, np.arange(n), x0)
        w = TAIL_REACH * (rg - lg)
        xe = np.r_[rg - w, lg + w]
        both = np.r_[np.arange(n), np.arange(n)]
        ab = hk_bounds(fam, np.r_[ts, ts], xe)
        th_x, cum_x = self._inner(sl, both, xe)
        psi_x = xe * th_x - cum_x
        tails = []
        for side in (0, 1):
            s = slice(0, n) if side == 0 else slice(n, 2 * n)
            sign = -1.0 if side == 0 else 1.0
            ze = ab[side][s]
            lim = th_e[:, P] - sl["th0"] if side == 0 else -sl["th0"]
            tails.append((ze, psi_x[s] + np.abs(xe[s] - ze) * (1 + sign * th_x[s]), lim))
        sl["tails"] = tails
        return sl

    def _inner(self, sl, k, x):
        """(theta, cum) relative to the anchor at x in [lg, rg] of slice rows k."""
        c, h = sl["c"][k], sl["h"][k]
        u = np.arccos(np.clip((c - x) / h, -1.0, 1.0))
        du = np.pi / self.panels
        j = np.minimum((u / du).astype(int), self.panels - 1)
        p_th, p_cum = self._partial(sl["t"][k], c, h, j * du, u)
        th = sl["th_e"][k, j] + p_th - sl["th0"][k]
        cum = sl["cum_e"][k, j] + p_cum - sl["cum0"][k]
        return th, cum

    def _eval_chunk(self, ts, x):
        ut, k = np.unique(ts, return_inverse=True)
        sl = self._slices(ut)
        psi, th = np.empty(x.size), np.empty(x.size)
        lg, rg = sl["lg"][k], sl["rg"][k]
        inner = (x >= lg) & (x <= rg)
        if inner.any():
            ti, ci = self._inner(sl, k[inner], x[inner])
            th[inner], psi[inner] = ti, x[inner] * ti - ci
        for side, sel in ((0, x < lg), (1, x > rg)):
            if not sel.any():
                continue
            sign = -1.0 if side == 0 else 1.0
            cut, psi_cut, th_lim = (v[k[sel]] for v in sl["tails"][side])
            z = x[sel]
            far = (z < cut) if side == 0 else (z > cut)
            ps, tz = np.empty(z.size), np.empty(z.size)
            near = ~far
            if near.any():
                kn = k[sel][near]
                xp = _hk_inverse(self.family, sl["t"][kn], z[near], side,
                                 reach=TAIL_REACH, ftol=1e-9)
                t0, c0 = self._inner(sl, kn, xp)
                ps[near] = xp * t0 - c0 + np.abs(xp - z[near]) * (1 + sign * t0)
                tz[near] = t0
            ps[far] = psi_cut[far] + (th_lim[far] + sign) * (z[far] - cut[far])
            tz[far] = th_lim[far]
            psi[sel], th[sel] = ps, tz
        return psi, th

    def evaluate(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        shape = x.shape
        t, x = t.ravel(), x.ravel()
        psi, th = np.empty(x.size), np.empty(x.size)
        # chunk by distinct time so each slice is built once
        ut, inv = np.unique(t, return_inverse=True)
        for lo in range(0, ut.size, self.chunk):
            m = (inv >= lo) & (inv < lo + self.chunk)
            psi[m], th[m] = self._eval_chunk(t[m], x[m])
        return psi.reshape(shape), th.reshape(shape)

    def psi(self, t, x):
        return self.evaluate(t, x)[0]

    def theta(self, t, x):
        return self.evaluate(t, x)[1]

    def psi_dot(self, t, x):
        t = np.asarray(t, dtype=float)
        return (self.psi(t + self.h, x) - self.psi(t - self.h, x)) / (2 * self.h)


def time_grid(eps, T, n=64):
    """Grid dense near small t, where psi changes fastest."""
    u = np.linspace(math.sqrt(eps), math.sqrt(T), n)
    g = u * u
    g[0], g[-1] = eps, T
    return g


def dual_functions(family, grid=None):
    """psi/theta provider for a family (closed forms where they exist).

    Families without a scaling law get exact per-time evaluation; passing a
    time ``grid`` selects linear interpolation between grid tables instead
    (cheaper for many queries, L >= 0 still exact, attainment only up to the
    interpolation error).
    """
    if family.name == "uniform":
        return UniformDual(family)
    if family.name == "atom-mix":
        return AtomMixDual(family)
    if not family.dispersive:
        raise NoDispersion(f"{family.name} does not satisfy the dispersion assumption")
    if family.self_similar:
        return SelfSimilarDual(family)
    if grid is not None:
        return TabulatedDual(family, grid=grid, order=1)
    return PointwiseDual(family)


# -- bounds -------------------------------------------------------------------

def _lambda_nodes(family, t, npanel=64):
    """GL nodes and weights of the continuous part of lambda_t (tails cut at x_range)."""
    _, lam = family.decompose(t)
    lo, hi = family.x_range(t)
    xs, ws = [], []
    if lam.density is not None:
        for plo, phi in lam.pieces:
            a, b = max(plo, lo), min(phi, hi)
            if b <= a:
                continue
            if family.log_scale and a > 0:
                y, w = numerics.gl_panels(math.log(a), math.log(b), npanel, order=16)
                x = np.exp(y)
                w = w * x
            else:
                x, w = numerics.gl_panels(a, b, npanel, order=16)
            xs.append(x)
            ws.append(w * lam.density(x))
    for loc, mass in lam.atoms:
        xs.append(np.array([loc]))
        ws.append(np.array([mass]))
    return np.concatenate(xs), np.concatenate(ws)


def psi_dq(family, t, dual):
    """int psi_t d(lambda_t - gamma_t) at one time slice."""
    xl, wl = _lambda_nodes(family, t)
    gamma, _ = family.decompose(t)
    xg, wg = _gamma_nodes(gamma)
    return float(np.dot(wl, dual.psi(t, xl)) - np.dot(wg, dual.psi(t, xg)))


def _time_nodes(family, eps, T, n=16):
    """GL nodes in u = t^alpha (alpha = 1/2 without a scaling law) and dt weights."""
    al = family.alpha if family.alpha else 0.5
    u, w = numerics.gl_panels(eps ** al, T ** al, 2, order=n // 2)
    t = u ** (1 / al)
    return t, w * t / (al * u)


def profile_integral(dual):
    """int Psi zeta over the t = 1 profile (ordinary and atomic parts)."""
    fam = dual.family
    return psi_dq(fam, 1.0, dual)


def tv_lower_bound(family, eps, T, dual=None):
    """int_eps^T dt int psi_t dq_t, with q_t = lambda_t - gamma_t."""
    if T <= eps:
        return 0.0
    if dual is None:
        # many x at few t: one table per quadrature time
        plain = family.dispersive and not family.self_similar and family.name != "atom-mix"
        dual = TabulatedDual(family) if plain else dual_functions(family)
    if family.name == "uniform":
        return 2.0 / 3 * float(family._s(T) - family._s(eps))
    if family.name == "atom-mix":
        # lambda_t = e^{-t} U[-1, 1] (so int |x| = e^{-t}/2), psi(0) = 0
        return 0.5 * (math.exp(-eps) - math.exp(-T))
    if family.self_similar:
        al = family.alpha
        return (T ** al - eps ** al) / al * profile_integral(dual)
    t, w = _time_nodes(family, eps, T)
    return float(sum(wi * psi_dq(family, ti, dual) for ti, wi in zip(t, w)))


def attained_tv_rate(family, t):
    """2 int gamma_t(dx) (b - x)(x - a)/(b - a): expected |jump| per unit time."""
    if family.name == "uniform":
        s = float(family._s(t))
        c = float(family._sdot(t)) / (2 * s * s)
        # int_{-s}^{s} c (s - x)(x + s)/(2s) * 2 dx
        return c * (4 * s ** 3 / 3) / s
    if family.name == "atom-mix":
        return 0.5 * math.exp(-t)
    gamma, _ = family.decompose(t)
    x, w = _gamma_nodes(gamma)
    a, b = hk_bounds(family, t, x)
    return float(2 * np.dot(w, (b - x) * (x - a) / (b - a)))


def attained_tv(family, eps, T, n=16):
    """Expected TV of the binomial-kernel process on [eps, T], by t-quadrature."""
    if T <= eps:
        return 0.0
    if not (family.dispersive or family.name in ("uniform", "atom-mix")):
        raise NoDispersion(f"{family.name} does not satisfy the dispersion assumption")
    t, w = _time_nodes(family, eps, T, n)
    return float(sum(wi * attained_tv_rate(family, ti) for ti, wi in zip(t, w)))


@lru_cache(maxsize=1)
def _gaussian_dual():
    from .families import GaussianFamily
    return SelfSimilarDual(GaussianFamily())


def brownian_constant():
    """(C, C_upper): C = 2 int Psi zeta for the standard normal profile."""
    return 2 * profile_integral(_gaussian_dual()), C_UPPER


def j_constant(dual):
    """sup |Psi - y Psi'| from the concave-convex-concave shape, with a grid cross-check."""
    tab = dual.table
    lE, rE = tab.left, tab.right
    P, T_, dP = tab.evaluate(np.array([lE, rE]))
    shape_value = max(P[0] + (T_[0] + 1) * abs(lE), P[1] + (1 - T_[1]) * rE,
                      dP[0] * lE - P[0], dP[1] * rE - P[1])
    y = np.union1d(np.linspace(12 * lE, 12 * rE, 4001), [lE, rE])
    Py, _, dPy = tab.evaluate(y)
    return float(shape_value), float(np.max(np.abs(Py - y * dPy)))


# -- Monte Carlo --------------------------------------------------------------

def path_tv(path):
    """Sum of absolute jump sizes of a piecewise-constant path."""
    prev, total = path.x0, 0.0
    for _, y in path.jumps:
        total += abs(y - prev)
        prev = y
    return total


@dataclass
class TVEstimate:
    estimate: float
    se: float
    n: int
    bound: float = float("nan")


def expected_tv_mc(paths, family=None, eps=None, T=None):
    tv = paths.tv()
    n = tv.size
    bound = float("nan")
    if family is not None:
        eps = paths.meta.get("eps_effective", paths.t0) if eps is None else eps
        T = paths.T if T is None else T
        try:
            bound = attained_tv(family, eps, T) if eps > 0 or family.name in ("uniform", "atom-mix") \
                else tv_lower_bound(family, eps, T)
        except NoDispersion:
            pass
    se = float(tv.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return TVEstimate(float(tv.mean()), se, n, bound)
