import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from mimic.errors import NoDispersion, QueryOutsideSupport
from mimic.transport import (BinomialKernel, HPFamilyKernels, _gamma_nodes, chord_objective,
                             hk_bounds, hk_kernel, hp_auxiliaries_for, hp_kernel,
                             kernel_quantile, pushforward_check)
from mimic.families import get_family

# root of 2(b^2 + 1) = exp(b^2 / 2), frozen from an independent bisection
B0 = brentq(lambda b: 2 * (b * b + 1) - math.exp(b * b / 2), 1.0, 3.0, xtol=1e-15)


def brute_force_targets(family, t, x, step, lo=-6.0, hi=6.0):
    """Exhaustive grid maximisation of the chord objective over alpha < x < beta."""
    al = np.arange(lo, x, step)
    be = np.arange(hi, x, -step)[::-1]
    best, arg = -np.inf, None
    for chunk in np.array_split(al, max(1, al.size // 500)):
        val = chord_objective(family, t, x, chunk[:, None], be[None, :])
        k = np.unravel_index(np.argmax(val), val.shape)
        if val[k] > best:
            best, arg = val[k], (chunk[k[0]], be[k[1]])
    return arg


def test_symmetric_root_frozen():
    assert B0 == pytest.approx(2.2261, abs=5e-4)
    assert 2 * (B0 ** 2 + 1) == pytest.approx(math.exp(B0 ** 2 / 2), abs=1e-12)


def test_gaussian_symmetric_targets(gauss):
    a, b = hk_bounds(gauss, 1.0, 0.0)
    assert float(b) == pytest.approx(B0, abs=1e-8)
    assert float(a) == pytest.approx(-B0, abs=1e-8)


@pytest.mark.parametrize("x", [-0.5, 0.0, 0.5])
def test_gaussian_targets_vs_coarse_grid(gauss, x):
    a, b = hk_bounds(gauss, 1.0, x)
    ga, gb = brute_force_targets(gauss, 1.0, x, 1e-2)
    assert abs(float(a) - ga) <= 2e-2 and abs(float(b) - gb) <= 2e-2


def test_uniform_targets(unif):
    a, b = hk_bounds(unif, 1.0, 0.3)
    assert (float(a), float(b)) == (-1.0, 1.0)


def test_targets_continuous_through_zero(gauss):
    a, b = hk_bounds(gauss, 1.0, np.array([-1e-9, 0.0, 1e-9]))
    assert np.ptp(a) < 1e-7 and np.ptp(b) < 1e-7


def test_targets_first_order_conditions(gauss):
    x = np.linspace(-0.9, 0.9, 19)
    a, b, phi = hk_bounds(gauss, 1.0, x, with_slope=True)
    np.testing.assert_allclose(gauss.dq(1.0, a), phi, rtol=1e-9, atol=1e-13)
    np.testing.assert_allclose(gauss.dq(1.0, x) - gauss.dq(1.0, b), phi, rtol=1e-9, atol=1e-13)
    lg, rg = gauss.gamma_support(1.0)
    assert np.all(a < lg) and np.all(b > rg)


def test_uniform_kernel_weights(unif):
    k = hk_kernel(unif, 2.0, 1.0)
    assert (k.a, k.b) == (-2.0, 2.0)
    assert k.p_down == pytest.approx(0.25) and k.p_up == pytest.approx(0.75)


def test_symmetric_point_has_even_weights(gauss):
    k = hk_kernel(gauss, 1.0, 0.0)
    assert k.p_up == pytest.approx(0.5, abs=1e-12)
    assert k.b == pytest.approx(B0, abs=1e-8)


def test_binomial_quantile():
    k = BinomialKernel(0.3, -1.0, 1.0)
    assert kernel_quantile(k, 0.2) == -1.0
    assert kernel_quantile(k, 0.9) == 1.0
    assert k.mean == pytest.approx(0.3, abs=1e-15)


def test_queries_outside_central_interval(gauss):
    with pytest.raises(QueryOutsideSupport):
        hk_bounds(gauss, 1.0, 1.5)


def test_non_dispersive_family_rejected(atoms):
    with pytest.raises(NoDispersion):
        hk_bounds(atoms, 1.0, 0.0)


# -- ODE for the targets ------------------------------------------------------

@pytest.mark.parametrize("name,t", [("gaussian", 1.0), ("gaussian", 0.3), ("exp-brownian", 0.5)])
def test_target_slopes_balance_mass(name, t):
    fam = get_family(name)
    lg, rg = (float(v) for v in fam.gamma_support(t))
    x = np.linspace(lg, rg, 23)[2:-2]
    h = 1e-5 * (rg - lg)
    a, b = hk_bounds(fam, t, x)
    ap, bp = hk_bounds(fam, t, x + h)
    am, bm = hk_bounds(fam, t, x - h)
    da, db = (ap - am) / (2 * h), (bp - bm) / (2 * h)
    pd = (b - x) / (b - a)
    rx = fam.density_rate(t, x)
    np.testing.assert_allclose(da * fam.density_rate(t, a), pd * rx, rtol=1e-3)
    np.testing.assert_allclose(db * fam.density_rate(t, b), (1 - pd) * rx, rtol=1e-3)


# -- HP auxiliaries and kernels ----------------------------------------------

@pytest.fixture(scope="module")
def uaux(unif):
    return hp_auxiliaries_for(unif, 1.0)


def test_uniform_max_chord_slope(uaux):
    assert float(uaux.xi(0.5)) == pytest.approx(0.125, abs=1e-9)


def test_uniform_argmax(uaux):
    assert float(uaux.g(0.5)) == pytest.approx(-1.0, abs=1e-9)
    assert float(uaux.g(-0.3)) == pytest.approx(-1.0, abs=1e-9)


def test_uniform_Xi(uaux):
    assert float(uaux.Xi(0.0)) == pytest.approx(0.25, abs=1e-9)


def test_Xi_nondecreasing(uaux):
    z = np.linspace(-0.99, 0.99, 199)
    assert np.all(np.diff(uaux.Xi(z)) >= -1e-12)


@pytest.fixture(scope="module")
def ukern(unif):
    return HPFamilyKernels(unif).kernel(1.0, 0.0)


def test_uniform_hp_upper_tail(ukern):
    z = np.array([1e-6, 0.3, 0.99, 1.0])
    np.testing.assert_allclose(ukern.upper_tail(z), 0.5, atol=1e-9)
    assert float(ukern.upper_tail(1.0 + 1e-6)) == pytest.approx(0.0, abs=1e-9)


def test_uniform_hp_lower_tail(ukern):
    assert float(ukern.lower_tail(-1.0)) == pytest.approx(0.5, abs=1e-9)
    assert float(ukern.lower_tail(-1.0 - 1e-6)) == pytest.approx(0.0, abs=1e-9)


def test_uniform_hp_quantile(ukern):
    # oracle: generalised inverse read off a direct CDF table
    z = np.linspace(-1.5, 1.5, 3001)
    F = ukern.cdf(z)
    assert z[np.argmax(F >= 0.75)] == pytest.approx(1.0, abs=1e-3)
    assert float(kernel_quantile(ukern, 0.75)) == pytest.approx(1.0, abs=1e-9)
    assert float(kernel_quantile(ukern, 0.25)) == pytest.approx(-1.0, abs=1e-9)


def test_gaussian_hp_kernel_moments(gauss):
    aux = hp_auxiliaries_for(gauss, 1.0)
    gamma, lam = gauss.decompose(1.0)
    for x in (-0.7, 0.0, 0.4):
        k = hp_kernel(aux, gamma, lam, x)
        assert k.mass == pytest.approx(1.0, abs=1e-9)
        assert k.mean == pytest.approx(x, abs=1e-7)


# -- pushforward --------------------------------------------------------------

def test_uniform_pushforward_exact(unif):
    assert pushforward_check(unif, 1.0, "hk").l1 == 0.0


def test_gaussian_pushforward(gauss):
    rep = pushforward_check(gauss, 1.0, "hk", nbins=1000)
    assert rep.l1 <= 1e-4
    assert rep.max_mean_error <= 1e-7


def test_pushforward_negative_control(gauss):
    # swap the weights: mass that should go down goes up
    t = 1.0
    gamma, lam = gauss.decompose(t)
    xn, wn = _gamma_nodes(gamma)
    a, b = hk_bounds(gauss, t, xn)
    pu = (xn - a) / (b - a)
    edges = np.linspace(-6, 6, 61)
    nu = (np.histogram(a, edges, weights=wn * pu)[0]
          + np.histogram(b, edges, weights=wn * (1 - pu))[0])
    lam_cells = np.diff(lam.cdf_left(edges))
    bad = np.sum(np.abs(nu - lam_cells))
    # the same node histogram with the right weights only carries binning error
    nu_ok = (np.histogram(a, edges, weights=wn * (1 - pu))[0]
             + np.histogram(b, edges, weights=wn * pu)[0])
    ok = np.sum(np.abs(nu_ok - lam_cells))
    assert ok < 5e-3 and bad > 0.05 and bad > 20 * ok


# -- properties ---------------------------------------------------------------

@given(u=st.floats(0.01, 0.99), t=st.floats(0.1, 3.0))
def test_binomial_kernel_is_martingale(u, t):
    fam = get_family("gaussian")
    lg, rg = (float(v) for v in fam.gamma_support(t))
    x = lg + u * (rg - lg)
    k = hk_kernel(fam, t, x)
    assert k.a < x < k.b
    assert k.p_up + k.p_down == pytest.approx(1.0, abs=1e-15)
    assert k.mean == pytest.approx(x, abs=1e-7 * (1 + abs(x)))


@given(u1=st.floats(0.01, 0.99), u2=st.floats(0.01, 0.99), t=st.floats(0.1, 2.0),
       name=st.sampled_from(["gaussian", "exp-brownian"]))
def test_targets_decrease(u1, u2, t, name):
    fam = get_family(name)
    lg, rg = (float(v) for v in fam.gamma_support(t))
    x1, x2 = sorted((lg + u1 * (rg - lg), lg + u2 * (rg - lg)))
    a, b = hk_bounds(fam, t, np.array([x1, x2]))
    assert a[0] >= a[1] - 1e-9 * (rg - lg)
    assert b[0] >= b[1] - 1e-9 * (rg - lg)


@pytest.fixture(scope="module")
def gauss_hp(gauss):
    kern = HPFamilyKernels(gauss)
    kern.table(1.0)
    return kern


@given(u=st.floats(0.02, 0.98), z=st.lists(st.floats(-3, 3), min_size=2, max_size=6))
def test_hp_upper_tail_nonincreasing(gauss_hp, u, z):
    kern = gauss_hp.kernel(1.0, -1 + 2 * u)
    z = np.sort(np.asarray(z))
    z = z[z > kern.x]
    if z.size > 1:
        assert np.all(np.diff(kern.upper_tail(z)) <= 1e-12)


@given(u=st.lists(st.floats(0.001, 0.999), min_size=2, max_size=8), x=st.floats(-0.9, 0.9))
def test_hp_quantile_monotone(gauss_hp, u, x):
    kern = gauss_hp.kernel(1.0, x)
    u = np.sort(np.asarray(u))
    q = kernel_quantile(kern, u)
    assert np.all(np.diff(q) >= -1e-9)
