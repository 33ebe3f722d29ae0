"""Closed-form marginal families (mu_t) increasing in convex order.

Each family exposes the density, potential U(t, x) = int |y - x| mu_t(dy),
Q = U_t / 2 and its x-derivative, the density rate, the jump rate
R_t = gamma_t / mu_t with its bound K(t), and the minimal decomposition of
q_t = Q_t'' into the orthogonal pair (gamma_t, lambda_t).

All evaluators broadcast over numpy arrays of ``t`` and ``x``.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import numerics
from .errors import InvalidProfile, QueryOutsideSupport, UnsupportedFamily

SQRT2PI = math.sqrt(2.0 * math.pi)


def _npdf(z):
    return np.exp(-0.5 * np.square(z)) / SQRT2PI


@dataclass(frozen=True)
class DecompositionMeasure:
    """A finite measure: a continuous density on ``pieces`` plus exact atoms."""

    density: Optional[Callable] = None
    pieces: tuple = ()
    atoms: tuple = ()
    # optional closed form of the continuous mass on (-inf, z)
    cdf_cont: Optional[Callable] = None
    log_scale: bool = False

    def _cont_integral(self, f, lo, hi):
        if self.density is None or hi <= lo:
            return 0.0
        if self.log_scale and lo > 0:
            g = lambda y: f(math.exp(y)) * float(self.density(math.exp(y))) * math.exp(y)
            return numerics.quad(g, math.log(lo), math.log(hi))
        return numerics.quad(lambda x: f(x) * float(self.density(x)), lo, hi)

    def integrate(self, f):
        total = 0.0
        for lo, hi in self.pieces:
            total += self._cont_integral(f, lo, hi)
        for loc, mass in self.atoms:
            total += mass * f(loc)
        return total

    def mass(self):
        return self.integrate(lambda x: 1.0)

    def mean(self):
        return self.integrate(lambda x: x)

    def cdf_left(self, z):
        """Mass of (-inf, z), atoms at z excluded."""
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        if self.density is not None:
            if self.cdf_cont is not None:
                out = out + self.cdf_cont(z)
            else:
                flat = out.ravel()
                for i, zi in enumerate(z.ravel()):
                    flat[i] += sum(self._cont_integral(lambda x: 1.0, lo, min(hi, zi))
                                   for lo, hi in self.pieces if lo < zi)
                out = flat.reshape(z.shape)
        for loc, mass in self.atoms:
            out = out + mass * (z > loc)
        return out

    @property
    def atom_locations(self):
        return tuple(loc for loc, _ in self.atoms)


class MarginalFamily:
    """Base class. Subclasses fill in the closed forms."""

    name = "abstract"
    mean = 0.0
    # Assumption of dispersion with the regularity needed by the HK solver
    dispersive = False
    # central-interval dispersion holds even if regularity fails
    dispersion_shape = False
    regular = True
    log_scale = False
    profile = None
    # mu_t = law(t^alpha Z): every t-slice is a rescaled copy of t = 1
    self_similar = False
    alpha = None

    def density(self, t, x):
        raise NotImplementedError

    def cdf(self, t, x):
        raise NotImplementedError

    def ppf(self, t, u):
        raise NotImplementedError

    def potential(self, t, x):
        raise NotImplementedError

    def q(self, t, x):
        raise NotImplementedError

    def dq(self, t, x):
        raise NotImplementedError

    def density_rate(self, t, x):
        raise NotImplementedError

    def rate(self, t, x):
        raise NotImplementedError

    def rate_bound(self, t):
        raise NotImplementedError

    def variance(self, t):
        raise NotImplementedError

    def support(self, t):
        return -np.inf, np.inf

    def gamma_support(self, t):
        raise NotImplementedError

    def lambda_support(self, t):
        return self.support(t)

    def decompose(self, t):
        raise NotImplementedError

    def atoms(self, t):
        return ()

    def in_support(self, t, x):
        return np.asarray(self.density(t, x)) > 0

    def x_range(self, t):
        s = math.sqrt(self.variance(t))
        lo, hi = self.support(t)
        return max(lo, self.mean - 10 * s), min(hi, self.mean + 10 * s)

    def solver_bracket(self, t):
        """Finite window used to bracket tail roots of Q'."""
        s = math.sqrt(self.variance(t))
        lo, hi = self.support(t)
        return max(lo, self.mean - 30 * s), min(hi, self.mean + 30 * s)

    def kbar(self, eps, T):
        """sup of K on (eps, T); K is non-increasing for every shipped family."""
        if eps <= 0:
            k = self.rate_bound(0.0)
        else:
            k = self.rate_bound(eps)
        return float(k)

    def m(self, t):
        """Total mass of gamma_t."""
        g, _ = self.decompose(t)
        return g.mass()

    def expect(self, t, f):
        """E f(X_t) by adaptive quadrature over the family's window plus atoms."""
        lo, hi = self.x_range(t)
        if self.log_scale:
            g = lambda y: f(math.exp(y)) * float(self.density(t, math.exp(y))) * math.exp(y)
            val = numerics.quad(g, math.log(lo), math.log(hi))
        else:
            pts = [p for p in self._breakpoints(t)]
            val = numerics.quad(lambda x: f(x) * float(self.density(t, x)), lo, hi, points=pts)
        for loc, mass in self.atoms(t):
            val += mass * f(loc)
        return val

    def _breakpoints(self, t):
        lg, rg = self.gamma_support(t)
        return [lg, rg, self.mean]

    def describe(self):
        return {"name": self.name}


class GaussianFamily(MarginalFamily):
    """mu_t = N(0, t): marginals of Brownian motion."""

    name = "gaussian"
    mean = 0.0
    dispersive = True
    dispersion_shape = True
    self_similar = True
    alpha = 0.5

    def __init__(self):
        self.profile = gaussian_profile(0.5)

    def density(self, t, x):
        t = np.asarray(t, dtype=float)
        return _npdf(x / np.sqrt(t)) / np.sqrt(t)

    def cdf(self, t, x):
        return special.ndtr(np.asarray(x) / np.sqrt(t))

    def ppf(self, t, u):
        return np.sqrt(t) * special.ndtri(u)

    def potential(self, t, x):
        st = np.sqrt(t)
        z = np.asarray(x) / st
        return 2 * st * _npdf(z) + x * (2 * special.ndtr(z) - 1)

    def q(self, t, x):
        st = np.sqrt(t)
        return _npdf(np.asarray(x) / st) / (2 * st)

    def dq(self, t, x):
        t = np.asarray(t, dtype=float)
        return -np.asarray(x) * _npdf(x / np.sqrt(t)) / (2 * t ** 1.5)

    def density_rate(self, t, x):
        t = np.asarray(t, dtype=float)
        return self.density(t, x) * (np.square(x) - t) / (2 * t * t)

    def rate(self, t, x):
        t = np.asarray(t, dtype=float)
        return np.maximum(t - np.square(x), 0.0) / (2 * t * t)

    def rate_bound(self, t):
        with np.errstate(divide="ignore"):
            return 1.0 / (2.0 * np.asarray(t, dtype=float))

    def variance(self, t):
        return float(t)

    def gamma_support(self, t):
        st = np.sqrt(t)
        return -st, st

    def m(self, t):
        return math.exp(-0.5) / (SQRT2PI * t)

    def decompose(self, t):
        st = math.sqrt(t)

        def gdens(x):
            return np.maximum(-self.density_rate(t, x), 0.0)

        def ldens(x):
            return np.maximum(self.density_rate(t, x), 0.0)

        # continuous mass of (-inf, z) as differences of Q' (= d/dt of the cdf)
        def gcdf(z):
            zc = np.clip(z, -st, st)
            return self.dq(t, -st) - self.dq(t, zc)

        def lcdf(z):
            left = self.dq(t, np.minimum(z, -st))
            right = np.where(z > st, self.dq(t, z) - self.dq(t, st), 0.0)
            return left + right

        gamma = DecompositionMeasure(gdens, ((-st, st),), cdf_cont=gcdf)
        lo, hi = self.x_range(t)
        lam = DecompositionMeasure(ldens, ((lo, -st), (st, hi)), cdf_cont=lcdf)
        return gamma, lam


class ExpBrownianFamily(MarginalFamily):
    """mu_t = law of exp(W_t - t/2), evaluated in log space."""

    name = "exp-brownian"
    mean = 1.0
    dispersive = True
    dispersion_shape = True
    log_scale = True

    def _logx(self, x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(np.asarray(x, dtype=float))

    def density(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        L = self._logx(x)
        with np.errstate(invalid="ignore", over="ignore"):
            lr = -1.5 * L - 0.5 * np.log(2 * np.pi * t) - L * L / (2 * t) - t / 8
            out = np.exp(lr)
        return np.where(x > 0, out, 0.0)

    def cdf(self, t, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            z = (self._logx(np.maximum(x, 0.0)) + 0.5 * t) / np.sqrt(t)
        return np.where(x > 0, special.ndtr(z), 0.0)

    def ppf(self, t, u):
        return np.exp(-0.5 * t + np.sqrt(t) * special.ndtri(u))

    def potential(self, t, x):
        x = np.asarray(x, dtype=float)
        st = np.sqrt(t)
        L = self._logx(np.maximum(x, 1e-300))
        d1 = -L / st + st / 2
        d2 = d1 - st
        inside = 2 * special.ndtr(d1) - 2 * x * special.ndtr(d2) + x - 1
        return np.where(x > 0, inside, 1 - x)

    def q(self, t, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x * x * self.density(t, x)

    def dq(self, t, x):
        x = np.asarray(x, dtype=float)
        L = self._logx(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.q(t, x) * (0.5 - L / t) / x
        return np.where(x > 0, out, 0.0)

    def density_rate(self, t, x):
        t = np.asarray(t, dtype=float)
        L = self._logx(x)
        with np.errstate(invalid="ignore"):
            out = self.density(t, x) / (2 * t * t) * (L * L - t - t * t / 4)
        return np.where(np.asarray(x) > 0, out, 0.0)

    def rate(self, t, x):
        t = np.asarray(t, dtype=float)
        L = self._logx(x)
        with np.errstate(invalid="ignore"):
            r = np.maximum(0.125 + 0.5 / t - L * L / (2 * t * t), 0.0)
        return np.where(np.asarray(x) > 0, r, 0.0)

    def rate_bound(self, t):
        with np.errstate(divide="ignore"):
            return 0.5 / np.asarray(t, dtype=float) + 0.125

    def variance(self, t):
        return math.expm1(t)

    def support(self, t):
        return 0.0, np.inf

    def gamma_support(self, t):
        h = np.sqrt(np.asarray(t) + np.square(t) / 4)
        return np.exp(-h), np.exp(h)

    def x_range(self, t):
        st = math.sqrt(t)
        return math.exp(-0.5 * t - 12 * st), math.exp(-0.5 * t + 12 * st)

    def solver_bracket(self, t):
        st = math.sqrt(t)
        return math.exp(-0.5 * t - 30 * st), math.exp(-0.5 * t + 30 * st)

    def _breakpoints(self, t):
        lg, rg = self.gamma_support(t)
        return [float(lg), float(rg), 1.0]

    def decompose(self, t):
        lg, rg = (float(v) for v in self.gamma_support(t))

        def gdens(x):
            return np.maximum(-self.density_rate(t, x), 0.0)

        def ldens(x):
            return np.maximum(self.density_rate(t, x), 0.0)

        def gcdf(z):
            zc = np.clip(z, lg, rg)
            return self.dq(t, lg) - self.dq(t, zc)

        def lcdf(z):
            left = self.dq(t, np.clip(z, 1e-300, lg))
            right = np.where(z > rg, self.dq(t, z) - self.dq(t, rg), 0.0)
            return left + right

        lo, hi = self.x_range(t)
        gamma = DecompositionMeasure(gdens, ((lg, rg),), cdf_cont=gcdf, log_scale=True)
        lam = DecompositionMeasure(ldens, ((lo, lg), (rg, hi)), cdf_cont=lcdf, log_scale=True)
        return gamma, lam


class UniformFamily(MarginalFamily):
    """mu_t = U[-t^alpha, t^alpha]; lambda_t is a pair of atoms at the ends."""

    name = "uniform"
    mean = 0.0
    regular = False
    dispersion_shape = True
    self_similar = True

    def __init__(self, alpha=1.0):
        self.alpha = float(alpha)
        self.profile = uniform_profile(self.alpha)

    def _s(self, t):
        return np.asarray(t, dtype=float) ** self.alpha

    def _sdot(self, t):
        return self.alpha * np.asarray(t, dtype=float) ** (self.alpha - 1)

    def density(self, t, x):
        s = self._s(t)
        return np.where(np.abs(x) < s, 0.5 / s, 0.0)

    def cdf(self, t, x):
        s = self._s(t)
        return np.clip((np.asarray(x) + s) / (2 * s), 0.0, 1.0)

    def ppf(self, t, u):
        return self._s(t) * (2 * np.asarray(u) - 1)

    def potential(self, t, x):
        s = self._s(t)
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < s, (s * s + x * x) / (2 * s), np.abs(x))

    def q(self, t, x):
        s = self._s(t)
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < s, self._sdot(t) * (s * s - x * x) / (4 * s * s), 0.0)

    def dq(self, t, x):
        s = self._s(t)
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < s, -self._sdot(t) * x / (2 * s * s), 0.0)

    def density_rate(self, t, x):
        # absolutely continuous part only; lambda_t is atomic at +-s
        s = self._s(t)
        return np.where(np.abs(x) < s, -self._sdot(t) / (2 * s * s), 0.0)

    def rate(self, t, x):
        s = self._s(t)
        return np.where(np.abs(x) < s, self._sdot(t) / s, 0.0)

    def rate_bound(self, t):
        with np.errstate(divide="ignore"):
            return self.alpha / np.asarray(t, dtype=float)

    def variance(self, t):
        return float(self._s(t)) ** 2 / 3

    def support(self, t):
        s = float(self._s(t))
        return -s, s

    def gamma_support(self, t):
        s = self._s(t)
        return -s, s

    def m(self, t):
        return self.alpha / t

    def decompose(self, t):
        s = float(self._s(t))
        c = float(self._sdot(t)) / (2 * s * s)

        def gdens(x):
            return np.where(np.abs(x) < s, c, 0.0)

        def gcdf(z):
            return c * (np.clip(z, -s, s) + s)

        gamma = DecompositionMeasure(gdens, ((-s, s),), cdf_cont=gcdf)
        half = float(self._sdot(t)) / (2 * s)
        lam = DecompositionMeasure(None, (), atoms=((-s, half), (s, half)))
        return gamma, lam

    def describe(self):
        return {"name": self.name, "alpha": self.alpha}


class AtomMixFamily(MarginalFamily):
    """mu_t = e^{-t} delta_0 + (1 - e^{-t}) U[-1, 1]."""

    name = "atom-mix"
    mean = 0.0
    regular = False

    def density(self, t, x):
        # absolutely continuous part; the atom at 0 is reported by atoms()
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < 1, 0.5 * -np.expm1(-np.asarray(t, dtype=float)), 0.0)

    def cdf(self, t, x):
        x = np.asarray(x, dtype=float)
        w = np.exp(-np.asarray(t, dtype=float))
        return (1 - w) * np.clip((x + 1) / 2, 0, 1) + w * (x >= 0)

    def ppf(self, t, u):
        u = np.asarray(u, dtype=float)
        w = np.exp(-np.asarray(t, dtype=float))
        c = 1 - w
        lo = c / 2
        y_low = 2 * u / np.where(c > 0, c, 1.0) - 1
        y_high = 2 * (u - w) / np.where(c > 0, c, 1.0) - 1
        return np.where(u <= lo, y_low, np.where(u <= lo + w, 0.0, y_high))

    def potential(self, t, x):
        x = np.asarray(x, dtype=float)
        w = np.exp(-np.asarray(t, dtype=float))
        inside = 0.5 * (1 + x * x) * (1 - w) + w * np.abs(x)
        return np.where(np.abs(x) < 1, inside, np.abs(x))

    def q(self, t, x):
        x = np.asarray(x, dtype=float)
        w = np.exp(-np.asarray(t, dtype=float))
        return np.where(np.abs(x) < 1, 0.25 * w * np.square(1 - np.abs(x)), 0.0)

    def dq(self, t, x):
        x = np.asarray(x, dtype=float)
        w = np.exp(-np.asarray(t, dtype=float))
        return np.where(np.abs(x) < 1, -0.5 * w * (1 - np.abs(x)) * np.sign(x), 0.0)

    def density_rate(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < 1, 0.5 * np.exp(-np.asarray(t, dtype=float)), 0.0)

    def rate(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.where(x == 0, 1.0, 0.0) + 0.0 * np.asarray(t, dtype=float)

    def rate_bound(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def variance(self, t):
        return -math.expm1(-t) / 3

    def support(self, t):
        return -1.0, 1.0

    def gamma_support(self, t):
        return 0.0, 0.0

    def lambda_support(self, t):
        return -1.0, 1.0

    def atoms(self, t):
        return ((0.0, math.exp(-t)),)

    def in_support(self, t, x):
        x = np.asarray(x, dtype=float)
        cont = np.abs(x) < 1
        if t <= 0:
            cont = np.zeros_like(cont)
        return cont | (x == 0)

    def m(self, t):
        return math.exp(-t)

    def x_range(self, t):
        return -1.0, 1.0

    def _breakpoints(self, t):
        return [0.0]

    def decompose(self, t):
        w = math.exp(-t)
        gamma = DecompositionMeasure(None, (), atoms=((0.0, w),))

        def ldens(x):
            return np.where(np.abs(x) < 1, 0.5 * w, 0.0)

        def lcdf(z):
            return 0.5 * w * (np.clip(z, -1, 1) + 1)

        lam = DecompositionMeasure(ldens, ((-1.0, 1.0),), cdf_cont=lcdf)
        return gamma, lam


@dataclass(frozen=True)
class SelfSimilarProfile:
    """Law of Z with mu_t = law(t^alpha Z) and its derived profile functions.

    ``P`` is the time-one Q function, P(z) = -alpha int_{-inf}^z y rho_Z(y) dy,
    and ``zeta`` = P'' = -alpha (rho_Z + z rho_Z').
    """

    alpha: float
    z_density: Callable
    z_support: tuple
    central_interval: tuple
    zeta: Callable
    rate_bound_constant: float
    kind: str = "tabulated"
    drho: Optional[Callable] = None
    cdf: Optional[Callable] = None
    ppf: Optional[Callable] = None
    P: Optional[Callable] = None
    dP: Optional[Callable] = None
    variance: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)


def gaussian_profile(alpha=0.5):
    a = float(alpha)
    if a <= 0:
        raise InvalidProfile("alpha must be positive")
    return SelfSimilarProfile(
        alpha=a,
        z_density=_npdf,
        z_support=(-np.inf, np.inf),
        central_interval=(-1.0, 1.0),
        zeta=lambda z: a * (np.square(z) - 1) * _npdf(z),
        rate_bound_constant=a,
        kind="gaussian",
        drho=lambda z: -np.asarray(z) * _npdf(z),
        cdf=special.ndtr,
        ppf=special.ndtri,
        P=lambda z: a * _npdf(z),
        dP=lambda z: -a * np.asarray(z) * _npdf(z),
        variance=1.0,
    )


def uniform_profile(alpha=1.0):
    a = float(alpha)
    if a <= 0:
        raise InvalidProfile("alpha must be positive")
    inside = lambda z: np.abs(np.asarray(z, dtype=float)) < 1
    return SelfSimilarProfile(
        alpha=a,
        z_density=lambda z: np.where(inside(z), 0.5, 0.0),
        z_support=(-1.0, 1.0),
        central_interval=(-1.0, 1.0),
        # absolutely continuous part; atoms alpha/2 at +-1 handled by UniformFamily
        zeta=lambda z: np.where(inside(z), -0.5 * a, 0.0),
        rate_bound_constant=a,
        kind="uniform",
        cdf=lambda z: np.clip((np.asarray(z) + 1) / 2, 0, 1),
        ppf=lambda u: 2 * np.asarray(u) - 1,
        P=lambda z: np.where(inside(z), 0.25 * a * (1 - np.square(z)), 0.0),
        dP=lambda z: np.where(inside(z), -0.5 * a * np.asarray(z), 0.0),
        variance=1.0 / 3,
    )


def tabulated_profile(z, rho, alpha, tol=1e-6):
    """Profile from a tabulated density of Z (cubic-spline interpolated)."""
    z = np.asarray(z, dtype=float)
    rho = np.asarray(rho, dtype=float)
    a = float(alpha)
    if a <= 0:
        raise InvalidProfile("alpha must be positive")
    if z.ndim != 1 or z.size < 8 or z.shape != rho.shape or np.any(np.diff(z) <= 0):
        raise InvalidProfile("tabulated profile needs matching increasing z and rho arrays")
    if np.any(rho < 0):
        raise InvalidProfile("density must be non-negative")
    spl = CubicSpline(z, rho, bc_type="natural")
    dspl = spl.derivative()
    F = spl.antiderivative()
    M = CubicSpline(z, z * rho, bc_type="natural").antiderivative()
    mass = float(F(z[-1]))
    mean = float(M(z[-1]))
    if abs(mass - 1) > tol:
        raise InvalidProfile(f"density integrates to {mass}, not 1")
    if abs(mean) > tol:
        raise InvalidProfile(f"density has mean {mean}, not 0")
    lo, hi = float(z[0]), float(z[-1])
    second = CubicSpline(z, z * z * rho, bc_type="natural").antiderivative()
    var = float(second(hi))

    def inside(v):
        v = np.asarray(v, dtype=float)
        return (v > lo) & (v < hi)

    def rho_f(v):
        return np.where(inside(v), np.maximum(spl(np.clip(v, lo, hi)), 0.0), 0.0)

    def drho_f(v):
        return np.where(inside(v), dspl(np.clip(v, lo, hi)), 0.0)

    def cdf_f(v):
        return np.clip(F(np.clip(v, lo, hi)) / mass, 0.0, 1.0)

    def P_f(v):
        return np.where(inside(v), -a * M(np.clip(v, lo, hi)), 0.0)

    def dP_f(v):
        return -a * np.asarray(v) * rho_f(v)

    def zeta_f(v):
        return -a * (rho_f(v) + np.asarray(v) * drho_f(v))

    def ppf_f(u):
        u = np.asarray(u, dtype=float)
        flat = u.ravel()
        r = numerics.solve_increasing(lambda x, i: cdf_f(x) - flat[i],
                                      np.full(flat.size, lo), np.full(flat.size, hi),
                                      xtol=1e-12)
        return r.reshape(u.shape)

    # central interval: where rho + z rho' > 0 around 0
    grid = np.linspace(lo, hi, 4001)
    s = rho_f(grid) + grid * drho_f(grid)
    i0 = int(np.argmin(np.abs(grid)))
    if s[i0] <= 0:
        raise InvalidProfile("rho_Z + z rho_Z' must be positive at 0")
    left = i0
    while left > 0 and s[left - 1] > 0:
        left -= 1
    right = i0
    while right < grid.size - 1 and s[right + 1] > 0:
        right += 1
    h = lambda v: float(rho_f(v) + v * drho_f(v))
    lE = brentq(h, grid[left - 1], grid[left]) if left > 0 else lo
    rE = brentq(h, grid[right], grid[right + 1]) if right < grid.size - 1 else hi
    inner = grid[(grid > lE) & (grid < rE)]
    ratio = np.maximum(-zeta_f(inner), 0) / np.maximum(rho_f(inner), 1e-300)
    KZ = float(ratio.max()) * (1 + 1e-9)
    return SelfSimilarProfile(
        alpha=a, z_density=rho_f, z_support=(lo, hi), central_interval=(lE, rE),
        zeta=zeta_f, rate_bound_constant=KZ, kind="tabulated", drho=drho_f,
        cdf=cdf_f, ppf=ppf_f, P=P_f, dP=dP_f, variance=var,
        meta={"z": z.tolist(), "rho": rho.tolist()},
    )


def load_profile(source):
    """Read a profile document {alpha, z_density}; ``source`` is a path or dict."""
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text())
    else:
        doc = dict(source)
    if "alpha" not in doc or "z_density" not in doc:
        raise InvalidProfile("profile needs 'alpha' and 'z_density'")
    zd = doc["z_density"]
    if zd == "gaussian":
        return gaussian_profile(doc["alpha"])
    if zd == "uniform":
        return uniform_profile(doc["alpha"])
    if isinstance(zd, dict) and "z" in zd and "rho" in zd:
        return tabulated_profile(zd["z"], zd["rho"], doc["alpha"])
    raise InvalidProfile(f"unknown z_density {zd!r}")


class SelfSimilarFamily(MarginalFamily):
    """mu_t = law(t^alpha Z) for a smooth profile of Z."""

    name = "self-similar"
    dispersive = True
    dispersion_shape = True
    self_similar = True

    def __init__(self, profile):
        self.profile = profile
        self.alpha = profile.alpha
        self.mean = 0.0

    def _s(self, t):
        return np.asarray(t, dtype=float) ** self.alpha

    def density(self, t, x):
        s = self._s(t)
        return self.profile.z_density(np.asarray(x) / s) / s

    def cdf(self, t, x):
        return self.profile.cdf(np.asarray(x) / self._s(t))

    def ppf(self, t, u):
        return self._s(t) * self.profile.ppf(u)

    def potential(self, t, x):
        p = self.profile
        s = self._s(t)
        z = np.asarray(x) / s
        Uz = z * (2 * p.cdf(z) - 1) + 2 * p.P(z) / self.alpha
        return s * Uz

    def q(self, t, x):
        t = np.asarray(t, dtype=float)
        return t ** (self.alpha - 1) * self.profile.P(np.asarray(x) / self._s(t))

    def dq(self, t, x):
        t = np.asarray(t, dtype=float)
        return self.profile.dP(np.asarray(x) / self._s(t)) / t

    def density_rate(self, t, x):
        t = np.asarray(t, dtype=float)
        return t ** (-self.alpha - 1) * self.profile.zeta(np.asarray(x) / self._s(t))

    def rate(self, t, x):
        t = np.asarray(t, dtype=float)
        z = np.asarray(x) / self._s(t)
        rz = self.profile.z_density(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.maximum(-self.profile.zeta(z), 0.0) / (t * rz)
        return np.where(rz > 0, r, 0.0)

    def rate_bound(self, t):
        with np.errstate(divide="ignore"):
            return self.profile.rate_bound_constant / np.asarray(t, dtype=float)

    def variance(self, t):
        return float(self._s(t)) ** 2 * self.profile.variance

    def support(self, t):
        lo, hi = self.profile.z_support
        s = float(self._s(t))
        return lo * s, hi * s

    def gamma_support(self, t):
        lE, rE = self.profile.central_interval
        s = self._s(t)
        return lE * s, rE * s

    def m(self, t):
        lE, rE = self.profile.central_interval
        return numerics.quad(lambda z: -float(self.profile.zeta(z)), lE, rE) / t

    def decompose(self, t):
        lg, rg = (float(v) for v in self.gamma_support(t))

        def gdens(x):
            return np.maximum(-self.density_rate(t, x), 0.0)

        def ldens(x):
            return np.maximum(self.density_rate(t, x), 0.0)

        def gcdf(z):
            zc = np.clip(z, lg, rg)
            return self.dq(t, lg) - self.dq(t, zc)

        lo, hi = self.x_range(t)

        def lcdf(z):
            left = self.dq(t, np.minimum(z, lg))
            right = np.where(z > rg, self.dq(t, z) - self.dq(t, rg), 0.0)
            return left + right

        gamma = DecompositionMeasure(gdens, ((lg, rg),), cdf_cont=gcdf)
        lam = DecompositionMeasure(ldens, ((lo, lg), (rg, hi)), cdf_cont=lcdf)
        return gamma, lam

    def describe(self):
        return {"name": self.name, "alpha": self.alpha, "z_density": self.profile.kind}


def self_similar_family(profile):
    """Family t -> law(t^alpha Z) for a validated profile."""
    if profile.kind == "uniform":
        return UniformFamily(profile.alpha)
    if profile.kind == "gaussian" and profile.alpha == 0.5:
        return GaussianFamily()
    lo, hi = profile.z_support
    wlo, whi = (max(lo, -12.0), min(hi, 12.0)) if profile.kind == "gaussian" else (lo, hi)
    mass = numerics.quad(lambda z: float(profile.z_density(z)), wlo, whi)
    mean = numerics.quad(lambda z: z * float(profile.z_density(z)), wlo, whi)
    if abs(mass - 1) > 1e-6 or abs(mean) > 1e-6:
        raise InvalidProfile(f"profile mass {mass}, mean {mean}")
    return SelfSimilarFamily(profile)


FAMILIES = {
    "gaussian": GaussianFamily,
    "exp-brownian": ExpBrownianFamily,
    "uniform": UniformFamily,
    "atom-mix": AtomMixFamily,
}


def get_family(name, **params):
    """Family by CLI name, including ``self-similar:<profile-file>``."""
    if name.startswith("self-similar:"):
        return self_similar_family(load_profile(name.split(":", 1)[1]))
    if name == "self-similar":
        return self_similar_family(load_profile(params))
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise UnsupportedFamily(f"unknown family {name!r}") from None
    return cls(**params)


# -- operations ---------------------------------------------------------------

def eval_rate(family, t, x):
    """Jump rate R_t(x); raises if x carries no mass of mu_t."""
    if not np.all(family.in_support(t, x)):
        raise QueryOutsideSupport(f"x={x} is not in the support of mu_{t}")
    return family.rate(t, x)


def eval_Q(family, t, x):
    return family.q(t, x)


def decompose(family, t):
    if not family.regular and family.name not in ("uniform", "atom-mix"):
        raise UnsupportedFamily(f"{family.name} has no orthogonal decomposition")
    return family.decompose(t)


@dataclass
class ConvexOrderReport:
    max_violation: float
    worst_t: float
    worst_x: float
    mass_error: float
    mean_error: float

    @property
    def ok(self):
        return self.max_violation <= 1e-10


def check_convex_order(family, t_grid, x_grid, moments=True):
    """Largest decrease of U(t, x) in t over the grid, plus mass/mean drift."""
    t_grid = np.asarray(t_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    U = np.stack([np.asarray(family.potential(t, x_grid), dtype=float) for t in t_grid])
    drop = -np.diff(U, axis=0)
    k = np.unravel_index(int(np.argmax(drop)), drop.shape)
    worst = float(max(drop[k], 0.0))
    mass_err = mean_err = 0.0
    if moments and hasattr(family, "expect"):
        for t in t_grid:
            mass_err = max(mass_err, abs(family.expect(t, lambda x: 1.0) - 1))
            mean_err = max(mean_err, abs(family.expect(t, lambda x: x) - family.mean))
    return ConvexOrderReport(worst, float(t_grid[k[0] + 1]), float(x_grid[k[1]]), mass_err, mean_err)
