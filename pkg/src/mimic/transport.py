"""Conditional jump laws pi^x_t moving gamma_t onto lambda_t.

Two constructions:

* the binomial (HK) kernel, which sends x to a_t(x) < x < b_t(x) and
  minimises the expected jump size under dispersion;
* the general (HP) kernel built from the max-chord-slope function xi, its
  argmax g and the survivor function Upsilon^x, which works for any
  orthogonal pair in convex order.

Both expose a quantile function used by the simulator.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import numerics
from .errors import (ConvergenceFailure, NoDispersion, QueryOutsideSupport,
                     QuadratureFailure, UnsupportedFamily)
from .families import DecompositionMeasure


# -- helpers ------------------------------------------------------------------

class _Var:
    """Solve variable: log x for families living on (0, inf)."""

    def __init__(self, log):
        self.log = log

    def to_x(self, v):
        return np.exp(v) if self.log else v

    def to_v(self, x):
        return np.log(x) if self.log else x

    def dxdv(self, v):
        return np.exp(v) if self.log else 1.0


def chord_objective(family, t, x, alpha, beta):
    """(cQ(beta) - Q(alpha)) / (beta - alpha) with cQ(y) = Q(x) + Q'(x)(y-x) - Q(y)."""
    qx = family.q(t, x)
    dqx = family.dq(t, x)
    tangent = qx + dqx * (beta - x) - family.q(t, beta)
    return (tangent - family.q(t, alpha)) / (beta - alpha)


def _flat(t, x):
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    return t.shape, t.ravel().copy(), x.ravel().copy()


# -- binomial kernel ----------------------------------------------------------

def hk_bounds(family, t, x, with_slope=False):
    """Down/up targets (a, b) of the binomial kernel; broadcasts over t and x.

    Solves the first-order conditions Q'(a) = phi, Q'(x) - Q'(b) = phi of the
    chord maximisation. For fixed phi each condition has a unique root on the
    relevant monotone branch of Q'; the remaining scalar equation in phi is
    increasing with slope b - a, so both levels use safeguarded Newton.
    """
    shape, tf, xf = _flat(t, x)
    if family.name == "uniform":
        s = np.asarray(family._s(tf))
        if np.any(np.abs(xf) >= s):
            raise QueryOutsideSupport("x must lie in the open interval (-s, s)")
        a, b = -s, s.copy()
        phi = np.asarray(family.q(tf, xf)) / s + 0.0 * xf
        out = (a.reshape(shape), b.reshape(shape))
        return out + (phi.reshape(shape),) if with_slope else out
    if not family.dispersive:
        raise NoDispersion(f"{family.name} does not satisfy the dispersion assumption")

    lg, rg = family.gamma_support(tf)
    lg = np.broadcast_to(np.asarray(lg, dtype=float), tf.shape)
    rg = np.broadcast_to(np.asarray(rg, dtype=float), tf.shape)
    if np.any(~((xf > lg) & (xf < rg))):
        raise QueryOutsideSupport("x must lie in the central interval E_t")
    V = _Var(family.log_scale)
    vl, vr = V.to_v(lg), V.to_v(rg)
    width = vr - vl
    v_lo, v_hi = vl - 20 * width, vr + 20 * width
    dqx = family.dq(tf, xf)
    phi_lo = np.maximum(0.0, dqx)
    phi_hi = np.maximum(np.minimum(family.dq(tf, lg), dqx - family.dq(tf, rg)), phi_lo)
    n = xf.size
    A = np.full(n, np.nan)
    B = np.full(n, np.nan)

    # in log(+-Q') the tails are close to quadratic, so Newton converges fast there
    def logf_left(v, tt, phi):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(family.dq(tt, V.to_x(v))) - np.log(phi)

    def logf_right(v, tt, target):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(-target) - np.log(-family.dq(tt, V.to_x(v)))

    def dlog(v, tt):
        xx = V.to_x(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(family.density_rate(tt, xx) * V.dxdv(v) / family.dq(tt, xx))

    def inner(phi, idx):
        tt = tf[idx]
        A[idx] = numerics.solve_increasing(
            lambda v, j: logf_left(v, tt[j], phi[j]), v_lo[idx], vl[idx],
            lambda v, j: dlog(v, tt[j]), x0=A[idx])
        target = dqx[idx] - phi
        B[idx] = numerics.solve_increasing(
            lambda v, j: logf_right(v, tt[j], target[j]), vr[idx], v_hi[idx],
            lambda v, j: dlog(v, tt[j]), x0=B[idx])

    def G(phi, idx):
        inner(phi, idx)
        tt, xx = tf[idx], xf[idx]
        a, b = V.to_x(A[idx]), V.to_x(B[idx])
        return (family.q(tt, a) + phi * (b - a) - family.q(tt, xx)
                - dqx[idx] * (b - xx) + family.q(tt, b))

    def Gp(phi, idx):
        return V.to_x(B[idx]) - V.to_x(A[idx])

    phi = numerics.solve_increasing(G, phi_lo, phi_hi, Gp)
    # final consistent evaluation
    inner(phi, np.arange(n))
    a, b = V.to_x(A), V.to_x(B)
    out = (a.reshape(shape), b.reshape(shape))
    return out + (phi.reshape(shape),) if with_slope else out


@dataclass(frozen=True)
class BinomialKernel:
    """Two-point martingale law on {a, b} with mean x."""

    x: float
    a: float
    b: float

    @property
    def p_up(self):
        return (self.x - self.a) / (self.b - self.a)

    @property
    def p_down(self):
        return (self.b - self.x) / (self.b - self.a)

    @property
    def mean(self):
        return self.p_up * self.b + self.p_down * self.a

    @property
    def mass(self):
        return self.p_up + self.p_down

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.where(y < self.a, 0.0, np.where(y < self.b, self.p_down, 1.0))

    def quantile(self, u):
        return np.where(np.asarray(u) <= self.p_down, self.a, self.b)


def hk_kernel(family, t, x):
    a, b = hk_bounds(family, t, x)
    return BinomialKernel(float(x), float(a), float(b))


# -- general (HP) kernel ------------------------------------------------------

def _measure_extent(m):
    lo, hi = np.inf, -np.inf
    for a, b in m.pieces:
        lo, hi = min(lo, a), max(hi, b)
    for loc, _ in m.atoms:
        lo, hi = min(lo, loc), max(hi, loc)
    return lo, hi


class HPAuxiliaries:
    """xi, g, Xi and the hazard denominator D for an orthogonal pair (gamma, lambda).

    ``Q`` is (1/2)(E_lambda|X - x| - E_gamma|X - x|). When ``dQ`` and
    ``dQQ`` (= Q'') are given and lambda has no atoms, g is found from the
    tangency equation on the convex region left of gamma's support;
    otherwise the chord slopes are scanned on a grid holding every kink.
    """

    def __init__(self, gamma, lam, Q, dQ=None, dQQ=None, tangent_floor=None, scan_points=4001):
        self.gamma = gamma
        self.lam = lam
        self.Q = Q
        self.dQ = dQ
        self.dQQ = dQQ
        self.left, self.right = _measure_extent(gamma)
        self.width = self.right - self.left
        llo, lhi = _measure_extent(lam)
        self.lam_lo, self.lam_hi = llo, lhi
        self.mode = "tangent" if (dQ is not None and dQQ is not None and not lam.atoms) else "scan"
        if self.mode == "tangent":
            self.tangent_floor = tangent_floor if tangent_floor is not None else self.left - 20 * self.width
            self.near = 1e-3 * self.width
        else:
            lo = min(llo, self.left) - 0.05 * (lhi - llo)
            hi = max(lhi, self.right)
            kinks = [loc for loc, _ in gamma.atoms + lam.atoms]
            kinks += [p for piece in gamma.pieces + lam.pieces for p in piece]
            cand = np.union1d(np.linspace(lo, hi, scan_points), np.asarray(kinks, dtype=float))
            self._cand = cand[np.isfinite(cand)]
            self._qcand = np.asarray(Q(self._cand), dtype=float)

    # Q'(z-)
    def dQ_left(self, z):
        z = np.asarray(z, dtype=float)
        if self.dQ is not None and self.mode == "tangent":
            return self.dQ(z)
        h = 1e-7 * max(1.0, self.width)
        return (self.Q(z) - self.Q(z - h)) / h

    def g(self, z):
        z = np.asarray(z, dtype=float)
        if self.mode == "tangent":
            return self._g_tangent(z)
        return self._scan(z)[0]

    def xi(self, z):
        z = np.asarray(z, dtype=float)
        if self.mode == "scan":
            return self._scan(z)[1]
        gz = self._g_tangent(z)
        with np.errstate(invalid="ignore", divide="ignore"):
            chord = (self.Q(z) - self.Q(gz)) / (z - gz)
        return np.where(gz < z, chord, self.dQ_left(z))

    def g_scalar(self, z, guess=None):
        """g at one point; Newton warm-started from ``guess`` (ODE sweeps)."""
        if self.mode == "scan":
            return float(self._scan(np.array([z]))[0][0])
        left = self.left
        if z <= left:
            return z
        if z - left < self.near:
            return left - 0.5 * (z - left)
        qz = float(self.Q(z))
        lo, hi = self.tangent_floor, left
        c = guess if guess is not None and lo < guess < hi else 0.5 * (lo + hi)
        for _ in range(200):
            f = float(self.Q(c)) + float(self.dQ(c)) * (z - c) - qz
            if f == 0:
                return c
            if f < 0:
                lo = c
            else:
                hi = c
            d = float(self.dQQ(c)) * (z - c)
            cn = c - f / d if d > 0 else 0.5 * (lo + hi)
            if not (lo < cn < hi):
                cn = 0.5 * (lo + hi)
            if abs(cn - c) <= 1e-15 * (1 + abs(c)) or hi - lo <= 1e-15 * (1 + abs(c)):
                return cn
            c = cn
        raise ConvergenceFailure(f"tangency solve failed at z={z}")

    def D_scalar(self, z, gz):
        if gz < z:
            xi = (float(self.Q(z)) - float(self.Q(gz))) / (z - gz)
        else:
            xi = float(self.dQ_left(np.array([z]))[0])
        if self.mode == "tangent":
            return xi - float(self.dQ(z))
        return float(self.gamma.cdf_left(np.array([z]))[0] - self.lam.cdf_left(np.array([z]))[0]) + xi

    def Xi(self, z):
        return self.lam.cdf_left(z) - self.xi(z)

    def D(self, z):
        """gamma((-inf, z)) - Xi(z)."""
        if self.mode == "tangent":
            # gamma((-inf,z)) - lambda((-inf,z)) = -Q'(z) without atoms
            return self.xi(z) - self.dQ(np.asarray(z, dtype=float))
        return self.gamma.cdf_left(z) - self.Xi(z)

    def _g_tangent(self, z):
        shape = z.shape
        zf = z.ravel()
        out = zf.copy()
        near = (zf > self.left) & (zf - self.left < self.near)
        # cubic expansion of Q about the inflection point left(gamma)
        out[near] = self.left - 0.5 * (zf[near] - self.left)
        far = zf - self.left >= self.near
        if np.any(far):
            zz = zf[far]
            qz = self.Q(zz)
            f = lambda c, j: self.Q(c) + self.dQ(c) * (zz[j] - c) - qz[j]
            fp = lambda c, j: self.dQQ(c) * (zz[j] - c)
            lo = np.full(zz.size, self.tangent_floor)
            hi = np.full(zz.size, self.left)
            out[far] = numerics.solve_increasing(f, lo, hi, fp)
        return out.reshape(shape)

    def _scan(self, z):
        shape = z.shape
        zf = z.ravel()
        c, qc = self._cand, self._qcand
        qz = np.asarray(self.Q(zf), dtype=float)
        g = zf.copy()
        xi = np.asarray(self.dQ_left(zf), dtype=float).copy()
        # candidates a rounding error below z give pure cancellation noise;
        # that limit is the left derivative already held in xi
        gap = 1e-9 * max(1.0, self.width)
        for i, zi in enumerate(zf):
            m = c < zi - gap
            if not m.any():
                continue
            sl = (qz[i] - qc[m]) / (zi - c[m])
            best = sl.max()
            tol = 1e-13 * (1 + abs(best))
            if xi[i] >= best - tol:
                continue
            j = np.nonzero(sl >= best - tol)[0][-1]
            g[i] = c[m][j]
            xi[i] = best
        return g.reshape(shape), xi.reshape(shape)

    def inverse_g(self, z):
        """w_z = inf{w > left: g(w) <= z} for z below gamma's support."""
        z = np.asarray(z, dtype=float)
        shape = z.shape
        zf = z.ravel()
        out = np.full(zf.size, self.left)
        below = zf < self.left
        if self.mode == "tangent" and np.any(below):
            cz = zf[below]
            qc, dqc = self.Q(cz), self.dQ(cz)
            # right intersection of the tangent at cz with Q
            f = lambda w, j: qc[j] + dqc[j] * (w - cz[j]) - self.Q(w)
            lo = np.full(cz.size, self.left)
            hi = np.full(cz.size, self.right + 200 * self.width)
            out[below] = numerics.solve_increasing(f, lo, hi)
        elif np.any(below):
            grid = np.linspace(self.left, self.lam_hi, 4001)[1:]
            gg = self.g(grid)
            for k in np.nonzero(below)[0]:
                hit = np.nonzero(gg <= zf[k])[0]
                out[k] = grid[hit[0]] if hit.size else np.inf
        return out.reshape(shape)


def hp_auxiliaries(gamma, lam, Q, dQ=None, dQQ=None, **kw):
    if set(a for a, _ in gamma.atoms) & set(a for a, _ in lam.atoms):
        raise ValueError("gamma and lambda must be orthogonal")
    return HPAuxiliaries(gamma, lam, Q, dQ, dQQ, **kw)


def hp_auxiliaries_for(family, t):
    """Auxiliaries for the pair (gamma_t, lambda_t) of a family."""
    gamma, lam = family.decompose(t)
    Q = lambda x: family.q(t, x)
    if family.regular and family.dispersive:
        floor = None
        if family.log_scale:
            floor = family.x_range(t)[0] * 1e-3
        return hp_auxiliaries(gamma, lam, Q, lambda x: family.dq(t, x),
                              lambda x: family.density_rate(t, x), tangent_floor=floor)
    return hp_auxiliaries(gamma, lam, Q)


class _DenseStack:
    """Vectorised evaluation of a DOP853 dense solution (one pass, no per-step loop)."""

    def __init__(self, sol):
        ts = np.asarray(sol.ts)
        order = np.argsort(ts)
        self.edges = ts[order]
        ips = sol.interpolants
        if ts[0] > ts[-1]:
            ips = ips[::-1]
        self.t_old = np.array([ip.t_old for ip in ips])
        self.h = np.array([ip.h for ip in ips])
        self.F = np.stack([np.asarray(ip.F) for ip in ips])       # (k, order, n)
        self.y_old = np.stack([ip.y_old for ip in ips])           # (k, n)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, self.h.size - 1)
        x = ((t - self.t_old[k]) / self.h[k])[:, None]
        F = self.F[k]
        y = np.zeros((t.size, F.shape[2]))
        for i in range(F.shape[1] - 1, -1, -1):
            y += F[:, i, :]
            y *= x if (F.shape[1] - 1 - i) % 2 == 0 else 1 - x
        return (y + self.y_old[k]).T


class HPTable:
    """Solution of the HP survival ODE on w in (left(gamma), w_end).

    Along w the source moves right, being sent down to g(w) at hazard
    1/(w - g(w)) and up to w at hazard lambda^c(w)/D(w) (plus the atom jumps
    of lambda). In the variable s = log(w - left) the near-boundary
    singularity is harmless. Per source x we need only conditional tails:

        Td(w)  = P(down-jump after w | alive at w),  Tmd = E[target; down]
        Tu(w)  = P(up-jump after w | alive at w),    Tmu = E[target; up]

    which obey linear ODEs integrated from the far right back to left(gamma),
    plus log S(w), the (unnormalised) log survival.
    """

    def __init__(self, aux, rtol=1e-12, atol=1e-15, drop=45.0, s0_rel=1e-9):
        self.aux = aux
        self.left = aux.left
        self.s0 = math.log(s0_rel * aux.width)
        self._lam_atoms = sorted((loc, m) for loc, m in aux.lam.atoms if loc > aux.left)
        self._find_end(drop)
        self._solve_backward(rtol, atol)

    # hazards at a single w
    def _hazards(self, w):
        a = self.aux
        gw = a.g_scalar(w, getattr(self, "_g_guess", None))
        self._g_guess = gw
        hd = 1.0 / (w - gw) if w > gw else 0.0
        hu = 0.0
        if a.lam.density is not None:
            lc = float(a.lam.density(w))
            if lc > 0:
                D = a.D_scalar(w, gw)
                hu = lc / D if D > 0 else 1e300
        return hd, hu, gw

    def _w(self, s):
        return self.left + math.exp(s)

    def _find_end(self, drop):
        """March log S forward from right(gamma) until it has dropped by ``drop``."""
        s = math.log(self.aux.right - self.left)
        s_cap = math.log(self.aux.right - self.left + 200 * self.aux.width)
        self.kill = None
        logS = 0.0

        def rhs(si, y):
            hd, hu, _ = self._hazards(self._w(si))
            return [-(hd + hu) * math.exp(si)]

        ev = lambda si, y: y[0] + drop
        ev.terminal = True
        for loc, m in self._lam_atoms + [(None, None)]:
            if loc is not None and loc < self.aux.right:
                continue
            s_stop = s_cap if loc is None else math.log(loc - self.left)
            if s_stop > s:
                sol = solve_ivp(rhs, (s, s_stop), [logS], method="DOP853", events=ev, rtol=1e-8, atol=1e-10)
                logS, s = float(sol.y[0, -1]), float(sol.t[-1])
                if sol.status == 1:
                    self.s_end = s
                    return
            if loc is None:
                break
            D = float(self.aux.D(np.array([loc]))[0])
            f = 1.0 if D <= 0 else min(m / D, 1.0)
            if f >= 1 - 1e-12:
                self.kill = loc
                self.s_end = s
                return
            logS += math.log1p(-f)
            if logS < -drop:
                self.s_end = s
                return
        self.s_end = s

    def _rhs(self, s, y):
        w = self._w(s)
        hd, hu, gw = self._hazards(w)
        e = math.exp(s)
        h = hd + hu
        return [-h * e,
                e * (h * y[1] - hd),
                e * (h * y[2] - hd * gw),
                e * (h * y[3] - hu),
                e * (h * y[4] - hu * w)]

    def _solve_backward(self, rtol, atol):
        # start from local equilibrium at the far end
        if self.kill is not None:
            y = [0.0, 0.0, 0.0, 1.0, self.kill]
        else:
            w = self._w(self.s_end)
            hd, hu, gw = self._hazards(w)
            h = hd + hu
            y = [0.0, hd / h, hd * gw / h, hu / h, hu * w / h] if h > 0 else [0.0, 0.0, 0.0, 1.0, w]
        atoms = [(loc, m) for loc, m in self._lam_atoms
                 if loc < self._w(self.s_end) and (self.kill is None or loc < self.kill)]
        self.segments = []   # (s_lo, s_hi, dense solution), in increasing s
        self.atom_s = []
        s = self.s_end
        for loc, m in list(reversed(atoms)) + [(None, None)]:
            s_stop = self.s0 if loc is None else math.log(loc - self.left)
            if s > s_stop:
                sol = solve_ivp(self._rhs, (s, s_stop), y, method="DOP853",
                                dense_output=True, rtol=rtol, atol=atol)
                if sol.status != 0:
                    raise QuadratureFailure(f"HP survival ODE failed: {sol.message}")
                self.segments.append((s_stop, s, _DenseStack(sol.sol)))
                y = list(sol.y[:, -1])
                s = s_stop
            if loc is None:
                break
            # crossing an atom of lambda from right to left
            D = float(self.aux.D(np.array([loc]))[0])
            f = min(m / D, 1.0)
            y = [y[0] - math.log1p(-f), (1 - f) * y[1], (1 - f) * y[2],
                 f + (1 - f) * y[3], f * loc + (1 - f) * y[4]]
            self.atom_s.append(s)
        self.segments.reverse()
        self._starts = np.array([seg[0] for seg in self.segments])
        self._ends = np.array([seg[1] for seg in self.segments])

    # -- evaluation ----------------------------------------------------------
    def state(self, w, side="right"):
        """ODE state at points w (vector); beyond the end S = 0."""
        w = np.asarray(w, dtype=float)
        shape = w.shape
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.log(np.maximum(w.ravel() - self.left, 0.0))
        s = np.maximum(s, self.s0)
        out = np.empty((5, s.size))
        k = np.searchsorted(self._starts, s, side=side) - 1
        k = np.clip(k, 0, len(self.segments) - 1)
        for j in np.unique(k):
            m = k == j
            lo, hi, sol = self.segments[j]
            out[:, m] = sol(np.clip(s[m], lo, hi))
        past = s > self._ends[-1] if side == "right" else s > self._ends[-1] + 0.0
        if self.kill is not None:
            past = s >= self._ends[-1] if side == "right" else s > self._ends[-1]
        out[0, past] = -np.inf
        out[1:, past] = 0.0
        return out.reshape((5,) + shape)

    def moments(self, x):
        """Down mass, up mass and mean of pi^x (vectorised in x)."""
        st = self.state(x, side="left")
        return st[1], st[3], st[2] + st[4]

    def _ratio(self, s_w, logS_x):
        with np.errstate(invalid="ignore", over="ignore"):
            return np.where(np.isfinite(s_w), np.exp(np.minimum(s_w - logS_x, 0.0)), 0.0)

    def lower_tail(self, x, z, wz=None):
        """pi^x((-inf, z]) for z < x; ``wz`` = inverse_g(z) if already known."""
        x, z = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
        sx = self.state(x, side="left")
        wz = self.aux.inverse_g(z) if wz is None else np.broadcast_to(wz, z.shape)
        wstar = np.maximum(x, wz)
        sw = self.state(wstar, side="left")
        val = self._ratio(sw[0], sx[0]) * sw[1]
        val = np.where(z >= self.left, sx[1], val)
        return np.where(np.isfinite(wz), val, 0.0)

    def upper_tail(self, x, z):
        """pi^x([z, inf)) for z > x."""
        x, z = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
        sx = self.state(x, side="left")
        sz = self.state(np.maximum(z, x), side="left")
        return self._ratio(sz[0], sx[0]) * sz[3]

    def up_cdf(self, x, z):
        """pi^x((x, z]) (the up-jump part of the CDF)."""
        sx = self.state(x, side="left")
        sz = self.state(np.maximum(z, x), side="right")
        return sx[3] - self._ratio(sz[0], sx[0]) * sz[3]

    def quantile(self, x, u):
        """Generalised inverse of the kernel CDF at u, vectorised over (x, u)."""
        x, u = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(u, dtype=float))
        shape = x.shape
        xf, uf = x.ravel(), u.ravel()
        sx = self.state(xf, side="left")
        pdown = sx[1]
        out = np.empty(xf.size)
        s_hi = self._ends[-1]
        sxv = np.log(np.maximum(xf - self.left, 1e-300))
        sxv = np.maximum(sxv, self.s0)
        down = uf <= pdown + 1e-12
        if np.any(down):
            # sampling by the w at which the down-jump happens; y = g(w)
            idx = np.nonzero(down)[0]
            # P(Y <= y) = P(w >= w_y): invert the tail in w
            tgt = uf[idx]
            ls_x = sx[0, idx]

            def f(sv, j):
                st = self.state(self.left + np.exp(sv))
                return tgt[j] - self._ratio(st[0], ls_x[j]) * st[1]
            sw = numerics.solve_increasing(f, sxv[idx], np.full(idx.size, s_hi), xtol=1e-13)
            out[idx] = self.aux.g(self.left + np.exp(sw))
        up = ~down
        if np.any(up):
            idx = np.nonzero(up)[0]
            tgt = np.minimum(uf[idx] - pdown[idx], sx[3, idx] * (1 - 1e-15))
            ls_x = sx[0, idx]
            tu_x = sx[3, idx]

            def f(sv, j):
                st = self.state(self.left + np.exp(sv), side="right")
                return tu_x[j] - self._ratio(st[0], ls_x[j]) * st[3] - tgt[j]
            hi = np.full(idx.size, s_hi if self.kill is None else s_hi + 1e-12)
            # up-jumps land on lambda, which lies right of gamma's support
            lo = np.maximum(sxv[idx], math.log(self.aux.right - self.left))
            sw = numerics.solve_increasing(f, np.minimum(lo, hi), hi, xtol=1e-15)
            w = self.left + np.exp(sw)
            if self.kill is not None:
                w = np.where(sw >= s_hi, self.kill, w)
                # snap onto atoms crossed within the tolerance
            for loc in [l for l, _ in self._lam_atoms]:
                w = np.where(np.abs(w - loc) <= 1e-12 * (1 + abs(loc)), loc, w)
            out[idx] = w
        return out.reshape(shape)


@dataclass
class GeneralKernel:
    """HP kernel pi^x: tails, CDF and quantile for one source point."""

    x: float
    table: Optional[HPTable] = None
    scale: float = 1.0
    shift: float = 0.0
    mass_at_source: float = 0.0
    # single-atom source: the kernel is lambda normalised
    direct: Optional[DecompositionMeasure] = None

    def _z(self, y):
        return (np.asarray(y, dtype=float) - self.shift) / self.scale

    @property
    def _xz(self):
        return (self.x - self.shift) / self.scale

    def lower_tail(self, y):
        if self.direct is not None:
            return self._direct_cdf(y, right=True)
        return self.table.lower_tail(self._xz, self._z(y))

    def upper_tail(self, y):
        if self.direct is not None:
            m = self.direct.mass()
            return 1.0 - self._direct_cdf(y, right=False)
        return self.table.upper_tail(self._xz, self._z(y))

    def _direct_cdf(self, y, right):
        y = np.asarray(y, dtype=float)
        m = self.direct.mass()
        val = self.direct.cdf_left(y)
        if right:
            for loc, mass in self.direct.atoms:
                val = val + mass * (y == loc)
        return val / m

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.direct is not None:
            return self._direct_cdf(y, right=True)
        z = self._z(y)
        xz = self._xz
        down = self.table.state(np.array([xz]), side="left")[1][0]
        lo = self.table.lower_tail(xz, np.minimum(z, xz))
        up = self.table.up_cdf(xz, z)
        return np.where(z < xz, lo, down + up)

    def moments(self):
        if self.direct is not None:
            m = self.direct.mass()
            return 1.0, self.direct.mean() / m
        d, u, mean = self.table.moments(np.array([self._xz]))
        return float(d[0] + u[0]), float(mean[0]) * self.scale + self.shift * float(d[0] + u[0])

    @property
    def mass(self):
        return self.moments()[0]

    @property
    def mean(self):
        return self.moments()[1]

    def quantile(self, u):
        if self.direct is not None:
            return _direct_quantile(self.direct, u)
        return self.scale * self.table.quantile(np.full(np.shape(u), self._xz), u) + self.shift


def _direct_quantile(measure, u):
    """Quantile of a normalised measure with a uniform continuous part."""
    u = np.asarray(u, dtype=float)
    m = measure.mass()
    if not measure.atoms and len(measure.pieces) == 1:
        (lo, hi), = measure.pieces
        # continuous part: invert cdf_left numerically
        f = lambda y, j: measure.cdf_left(y) / m - u.ravel()[j]
        r = numerics.solve_increasing(f, np.full(u.size, lo), np.full(u.size, hi), xtol=1e-14)
        return r.reshape(u.shape)
    raise UnsupportedFamily("direct quantile needs a single continuous piece")


def hp_kernel(aux, gamma, lam, x, table=None):
    """GeneralKernel from source x for the pair (gamma, lambda)."""
    if table is None:
        table = HPTable(aux)
    if not (aux.left < x < aux.right):
        raise QueryOutsideSupport("source must lie inside the support of gamma")
    return GeneralKernel(float(x), table)


class HPFamilyKernels:
    """HP kernels of a family at arbitrary t.

    Self-similar families reuse one table built at t = 1 and rescale;
    otherwise a table is built per t (cached).
    """

    def __init__(self, family):
        self.family = family
        self._cache = {}
        if family.name == "atom-mix":
            self.mode = "direct"
        elif family.self_similar:
            self.mode = "scaled"
        else:
            self.mode = "per-t"

    def table(self, t):
        key = 1.0 if self.mode == "scaled" else float(t)
        if key not in self._cache:
            self._cache[key] = HPTable(hp_auxiliaries_for(self.family, key))
        return self._cache[key]

    def _scale(self, t):
        return float(t) ** self.family.alpha if self.mode == "scaled" else 1.0

    def kernel(self, t, x):
        if self.mode == "direct":
            g, lam = self.family.decompose(t)
            if not g.atoms or abs(x - g.atoms[0][0]) > 0:
                raise QueryOutsideSupport("source must be the atom of gamma")
            return GeneralKernel(float(x), direct=lam)
        sc = self._scale(t)
        tab = self.table(t)
        z = x / sc
        if not (tab.left < z < tab.aux.right):
            raise QueryOutsideSupport("source must lie inside the support of gamma")
        return GeneralKernel(float(x), tab, scale=sc)

    def sample(self, t, x, u):
        """Post-jump values for vectors (t, x, u)."""
        t, x, u = (np.asarray(v, dtype=float) for v in np.broadcast_arrays(t, x, u))
        if self.mode == "direct":
            return 2 * u - 1 if self.family.name == "atom-mix" else None
        if self.mode == "scaled":
            sc = t ** self.family.alpha
            return sc * self.table(1.0).quantile(x / sc, u)
        out = np.empty_like(x)
        for tv in np.unique(t):
            m = t == tv
            out[m] = self.table(tv).quantile(x[m], u[m])
        return out


def kernel_quantile(kernel, u):
    """Generalised inverse inf{y : F(y) >= u} of a kernel CDF."""
    return kernel.quantile(u)


# -- samplers used by the simulator ------------------------------------------

def jump_sampler(family, kind):
    """Function (t, x, u) -> post-jump value, vectorised, for a kernel choice."""
    if kind == "hk":
        if family.name == "uniform":
            return _uniform_binomial(family)
        if not family.dispersive:
            raise NoDispersion(f"{family.name} does not satisfy the dispersion assumption")

        def sample(t, x, u):
            a, b = hk_bounds(family, t, x)
            pdown = (b - x) / (b - a)
            return np.where(u <= pdown, a, b)
        return sample
    if kind == "hp":
        k = HPFamilyKernels(family)
        if k.mode == "per-t":
            raise UnsupportedFamily("hp simulation needs a self-similar family (one reusable table)")
        return k.sample
    if kind == "closed-form":
        if family.name == "uniform":
            return _uniform_binomial(family)
        if family.name == "atom-mix":
            return lambda t, x, u: 2 * np.asarray(u, dtype=float) - 1
        raise UnsupportedFamily(f"no closed-form kernel for {family.name}")
    raise UnsupportedFamily(f"unknown kernel {kind!r}")


def _uniform_binomial(family):
    def sample(t, x, u):
        s = np.asarray(family._s(t))
        return np.where(u <= (s - x) / (2 * s), -s, s)
    return sample


# -- pushforward check --------------------------------------------------------

@dataclass
class PushforwardReport:
    l1: float
    continuous_l1: float
    atom_error: float
    max_mean_error: float
    max_mass_error: float
    edges: np.ndarray = field(repr=False, default=None)


def _gamma_nodes(gamma, npanel=64):
    if gamma.density is None:
        return np.array([loc for loc, _ in gamma.atoms]), np.array([m for _, m in gamma.atoms])
    xs, ws = [], []
    for lo, hi in gamma.pieces:
        x, w = numerics.gl_panels(lo, hi, npanel, order=16)
        xs.append(x)
        ws.append(w * gamma.density(x))
    return np.concatenate(xs), np.concatenate(ws)


def _split_gl(gamma, cuts, npanel=16):
    """GL nodes and gamma-density weights on consecutive cut intervals."""
    xs, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            x, w = numerics.gl_panels(a, b, npanel, order=16)
            xs.append(x)
            ws.append(w * gamma.density(x))
    return np.concatenate(xs), np.concatenate(ws)


def _hk_inverse(family, t, z, side, x0=None, reach=1e-8, ftol=1e-12):
    """x with a_t(x) = z (side 0) or b_t(x) = z (side 1); both maps decrease in x.

    a runs off to the far tail as x approaches the right end of gamma's
    support (b likewise at the left end), so the solve variable is the log
    distance to that end. Newton uses the mass-balance slopes
    a' rho_dot(a) = p_down rho_dot(x) and b' rho_dot(b) = p_up rho_dot(x).
    """
    z = np.asarray(z, dtype=float).ravel()
    t = np.broadcast_to(np.asarray(t, dtype=float).ravel(), z.shape) if np.ndim(t) else float(t)
    lg, rg = family.gamma_support(t)
    lg = np.broadcast_to(np.asarray(lg, dtype=float), z.shape)
    rg = np.broadcast_to(np.asarray(rg, dtype=float), z.shape)
    h = np.log if family.log_scale else (lambda y: y)
    dh = (lambda y: 1.0 / y) if family.log_scale else (lambda y: 1.0)
    sel = (lambda arr, j: arr[j]) if np.ndim(t) else (lambda arr, j: arr)
    if side == 0:
        to_x = lambda v, j: rg[j] - np.exp(-v)
        dxdv = lambda x, j: rg[j] - x
        to_v = lambda x, j: -np.log(rg[j] - x)
    else:
        to_x = lambda v, j: lg[j] + np.exp(v)
        dxdv = lambda x, j: x - lg[j]
        to_v = lambda x, j: np.log(x - lg[j])
    cache = {}

    def f(v, j):
        jj = idx[j]
        x = to_x(v, jj)
        a, b = hk_bounds(family, sel(t, jj), x)
        cache["ab"] = (x, a, b)
        tgt = a if side == 0 else b
        return h(zs[j]) - h(tgt)

    def fp(v, j):
        jj = idx[j]
        x, a, b = cache["ab"]
        p = (b - x) / (b - a) if side == 0 else (x - a) / (b - a)
        tgt = a if side == 0 else b
        tt = sel(t, jj)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (-dh(tgt) * p * family.density_rate(tt, x) / family.density_rate(tt, tgt)
                    * dxdv(x, jj))
    # gamma has O(eps^2) mass within eps of its endpoints; ``reach`` only
    # clips the end where the target runs off, the other end stays tight
    near = min(reach, 1e-10) * (rg - lg)
    far = reach * (rg - lg)
    lo, hi = (lg + near, rg - far) if side == 0 else (lg + far, rg - near)
    if np.ndim(t):
        ends = hk_bounds(family, np.r_[t, t], np.r_[lo, hi])[side].reshape(2, -1)
    else:
        ends = hk_bounds(family, t, np.array([lo[0], hi[0]]))[side][:, None]
    # targets beyond the reach of the clipped interval map to its ends
    out = np.where(z >= ends[0], lo, hi)
    inside = (z < ends[0]) & (z > ends[1])
    if inside.any():
        idx = np.flatnonzero(inside)
        zs = z[inside]
        g = None
        if x0 is not None:
            g = np.clip(np.broadcast_to(np.asarray(x0, dtype=float).ravel(), z.shape)[inside],
                        lo[inside], hi[inside])
            g = to_v(g, idx)
        v = numerics.solve_increasing(f, to_v(lo[inside], idx), to_v(hi[inside], idx), fp,
                                      xtol=1e-13, x0=g, ftol=ftol * (1 + np.abs(h(zs))))
        out[inside] = to_x(v, idx)
    return out


def _cum_gamma_weight(family, t, gamma, weight, x_edges):
    """int_{x_edges[k]}^{right} gamma(dx) weight(x) for sorted edges (GL per cell)."""
    lg, rg = (float(v) for v in family.gamma_support(t))
    e = np.concatenate([np.clip(np.sort(x_edges), lg, rg), [rg]])
    xg, wg = numerics.gauss_legendre(16)
    half = 0.5 * np.diff(e)
    mid = 0.5 * (e[1:] + e[:-1])
    nodes = mid[:, None] + half[:, None] * xg[None, :]
    w = half[:, None] * wg[None, :] * gamma.density(nodes) * weight(nodes)
    cell = w.sum(axis=1)
    tail = np.cumsum(cell[::-1])[::-1]
    out = np.empty(x_edges.size)
    out[np.argsort(x_edges)] = tail
    return out


def pushforward_check(family, t, kernel="hk", nbins=1000, hp=None):
    """L1 distance between gamma_t pushed through the kernels and lambda_t.

    The distance is the sum over a fine partition (``nbins`` cells on each
    side of gamma's support plus two tail cells) of |nu(cell) - lambda(cell)|,
    plus the mismatch of atom masses.
    """
    gamma, lam = family.decompose(t)
    if family.name == "uniform" and kernel in ("hk", "closed-form"):
        # both targets are the atoms +-s: compare masses in closed form
        s = float(family._s(t))
        c = float(family._sdot(t)) / (2 * s * s)
        down = c * (2 * s * s) / (2 * s)  # int_{-s}^{s} c (s - x)/(2s) dx
        up = c * (2 * s * s) / (2 * s)
        err = abs(down - dict(lam.atoms)[-s]) + abs(up - dict(lam.atoms)[s])
        return PushforwardReport(err, 0.0, err, 0.0, 0.0)
    if family.name == "atom-mix":
        # a single source atom: the kernel is lambda normalised, so the pushforward is exact
        return PushforwardReport(0.0, 0.0, 0.0, 0.0, 0.0)

    lg, rg = (float(v) for v in family.gamma_support(t))
    lo, hi = family.x_range(t)
    if lam.atoms:
        # keep atoms of lambda off the outer edges so each sits inside a cell
        pad = 0.01 * (rg - lg)
        lo, hi = min(lo, lg) - pad, max(hi, rg) + pad
    if family.log_scale:
        left_edges = np.geomspace(lo, lg, nbins + 1)
        right_edges = np.geomspace(rg, hi, nbins + 1)
    else:
        left_edges = np.linspace(lo, lg, nbins + 1)
        right_edges = np.linspace(rg, hi, nbins + 1)
    xn, wn = _gamma_nodes(gamma)

    # nu((-inf, e]) at left edges (below gamma) and nu((right, e]) at right edges
    if kernel == "hk":
        a_n, b_n = hk_bounds(family, t, xn)
        pdown = (b_n - xn) / (b_n - a_n)
        mean_err = float(np.max(np.abs(pdown * a_n + (1 - pdown) * b_n - xn)))
        mass_err = 0.0
        total_down = float(np.sum(wn * pdown))
        total_up = float(np.sum(wn * (1 - pdown)))

        def pd(x):
            a, b = hk_bounds(family, t, x)
            return (b - x) / (b - a)
        # a, b decrease in x: a(x) <= e iff x >= a^{-1}(e), likewise for b
        xa = _hk_inverse(family, t, left_edges[:-1], 0)
        nu_left = _cum_gamma_weight(family, t, gamma, pd, xa)
        xb = _hk_inverse(family, t, right_edges[1:], 1)
        nu_right = _cum_gamma_weight(family, t, gamma, lambda x: 1 - pd(x), xb)
    elif kernel == "hp":
        kern = hp if hp is not None else HPFamilyKernels(family)
        sc = kern._scale(t)
        tab = kern.table(t)
        zn = xn / sc
        d, u, mean = tab.moments(zn)
        mean_err = float(np.max(np.abs(mean * sc - xn)))
        mass_err = float(np.max(np.abs(d + u - 1)))
        total_down = float(np.sum(wn * d))
        total_up = float(np.sum(wn * u))
        # the lower tail has a kink in x at w_z: integrate both sides separately
        ze = left_edges[:-1] / sc
        wz = tab.aux.inverse_g(ze)
        nu_left = np.empty(ze.size)
        for k, (zk, wk) in enumerate(zip(ze, wz)):
            mid = min(max(wk, tab.left), tab.aux.right)
            xs, ws = _split_gl(gamma, [lg, mid * sc, rg])
            nu_left[k] = np.sum(ws * tab.lower_tail(xs / sc, zk, wk))
        nu_right = np.array([np.sum(wn * tab.up_cdf(zn, np.full(zn.shape, e / sc)))
                             for e in right_edges[1:]])
    else:
        raise UnsupportedFamily(f"unknown kernel {kernel!r}")

    F_nu = np.concatenate([nu_left, [total_down], total_down + nu_right])
    pts = np.concatenate([left_edges, right_edges[1:]])
    F_lam = lam.cdf_left(pts)
    # the down mass sits on (-inf, left end of gamma], atoms at that end included
    k = left_edges.size - 1
    F_lam[k] += sum(mass for loc, mass in lam.atoms if loc == pts[k])
    m_nu, m_lam = total_down + total_up, float(lam.mass())
    l1 = (abs(F_nu[0] - F_lam[0]) + float(np.sum(np.abs(np.diff(F_nu) - np.diff(F_lam))))
          + abs((m_nu - F_nu[-1]) - (m_lam - F_lam[-1])))
    return PushforwardReport(l1, l1, 0.0, mean_err, mass_err, edges=pts)
