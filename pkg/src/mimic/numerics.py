"""Small numerical helpers shared by the modules: vectorised root finding,
fixed Gauss-Legendre rules and a thin adaptive-quadrature wrapper."""

import hashlib
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import ConvergenceFailure, QuadratureFailure

QUAD_EPSABS = 1e-10


def solve_increasing(f, lo, hi, fprime=None, xtol=1e-14, maxiter=200, x0=None, ftol=0.0):
    """Vectorised root of an elementwise increasing function on [lo, hi].

    Safeguarded Newton: a Newton step is taken when ``fprime`` is given and
    the step stays inside the current bracket, unless the previous Newton
    step failed to cut |f| fourfold; otherwise the bracket is bisected.
    Elements are frozen once converged so every result depends only on its
    own inputs (batch composition never changes the bits).

    ``f`` and ``fprime`` receive ``(x, idx)`` where ``idx`` indexes the
    active elements of the flattened problem. ``x0`` is an optional starting
    point (clipped into the bracket). ``ftol`` accepts any point with
    |f| <= ftol, for residuals with a known noise floor.
    """
    lo = np.array(lo, dtype=float).ravel().copy()
    hi = np.array(hi, dtype=float).ravel().copy()
    n = lo.size
    x = 0.5 * (lo + hi)
    if x0 is not None:
        x0 = np.array(x0, dtype=float).ravel()
        inside = np.isfinite(x0) & (x0 > lo) & (x0 < hi)
        x = np.where(inside, x0, x)
    done = np.zeros(n, dtype=bool)
    ftol = np.broadcast_to(np.asarray(ftol, dtype=float), (n,))
    fprev = np.full(n, np.inf)
    bisected = np.zeros(n, dtype=bool)
    idx = np.arange(n)
    fx = np.asarray(f(x, idx), dtype=float)
    for _ in range(maxiter):
        ia = idx[~done]
        if ia.size == 0:
            return x
        xa, fa = x[ia], fx[ia]
        la = np.where(fa < 0, xa, lo[ia])
        ha = np.where(fa > 0, xa, hi[ia])
        scale = xtol * (1.0 + np.abs(xa))
        exact = np.abs(fa) <= ftol[ia]
        xn = 0.5 * (la + ha)
        tiny = np.zeros(ia.size, dtype=bool)
        # bisect when a Newton step failed to cut |f| fourfold, so Newton cannot
        # crawl along flat tails; after a bisection Newton gets another try
        slow = (np.abs(fa) > 0.25 * fprev[ia]) & ~bisected[ia]
        fprev[ia] = np.abs(fa)
        if fprime is not None:
            d = np.asarray(fprime(xa, ia), dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = fa / d
            good = np.isfinite(step) & (d > 0)
            # a Newton correction below tolerance means xa is already the root
            tiny = good & (np.abs(step) <= 0.25 * scale)
            xnew = xa - np.where(good, step, 0.0)
            ok = good & (xnew > la) & (xnew < ha) & ~slow
            xn = np.where(ok, xnew, xn)
            bisected[ia] = ~ok
        else:
            bisected[ia] = True
        exact = exact | tiny
        conv = exact | (ha - la <= scale) | (np.abs(xn - xa) <= 0.25 * scale)
        lo[ia], hi[ia] = la, ha
        x[ia] = np.where(exact, xa, xn)
        done[ia[conv]] = True
        live = ia[~conv]
        if live.size:
            fx[live] = f(x[live], live)
    if not done.all():
        raise ConvergenceFailure(f"{int((~done).sum())} roots did not converge")
    return x


def hash64(seed, index):
    """Stable 64-bit key for the RNG substream of path ``index``."""
    h = hashlib.blake2b(f"{int(seed)}:{int(index)}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@lru_cache(maxsize=16)
def gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gl_panels(lo, hi, npanel, order=16):
    """Nodes and weights of a composite Gauss-Legendre rule on [lo, hi]."""
    x, w = gauss_legendre(order)
    edges = np.linspace(lo, hi, npanel + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def quad(f, lo, hi, points=None, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=400):
    """Adaptive Gauss-Kronrod integral of a scalar function."""
    if hi <= lo:
        return 0.0
    kw = dict(epsabs=epsabs, epsrel=epsrel, limit=limit)
    if points is not None and np.isfinite(lo) and np.isfinite(hi):
        pts = [p for p in points if lo < p < hi]
        if pts:
            kw["points"] = pts
    val, err = integrate.quad(f, lo, hi, **kw)
    if not np.isfinite(val):
        raise QuadratureFailure(f"non-finite integral on [{lo}, {hi}]")
    return val
