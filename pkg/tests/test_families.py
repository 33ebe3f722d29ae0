import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from mimic.errors import InvalidProfile, QueryOutsideSupport, UnsupportedFamily
from mimic.families import (MarginalFamily, check_convex_order, decompose, eval_Q, eval_rate,
                            gaussian_profile, get_family, load_profile, self_similar_family,
                            tabulated_profile, uniform_profile)

from conftest import fd_t, fd_xx


# -- rates and Q --------------------------------------------------------------

def test_gaussian_rate_at_centre(gauss):
    assert eval_rate(gauss, 1.0, 0.0) == pytest.approx(0.5, abs=1e-14)


def test_gaussian_rate_outside_central_interval(gauss):
    assert eval_rate(gauss, 1.0, 2.0) == 0.0


def test_uniform_rate(unif):
    assert eval_rate(unif, 1.0, 0.3) == pytest.approx(1.0, abs=1e-14)


def test_rate_outside_support_raises(unif):
    with pytest.raises(QueryOutsideSupport):
        eval_rate(unif, 1.0, 2.0)


def test_gaussian_q_at_centre(gauss):
    assert eval_Q(gauss, 1.0, 0.0) == pytest.approx(1 / (2 * math.sqrt(2 * math.pi)), rel=1e-14)


def test_uniform_q_at_centre(unif):
    assert eval_Q(unif, 1.0, 0.0) == pytest.approx(0.25, abs=1e-14)


@pytest.mark.parametrize("name", ["gaussian", "exp-brownian", "uniform", "atom-mix"])
def test_q_vanishes_at_far_end(name):
    fam = get_family(name)
    lo, hi = fam.x_range(1.0)
    assert abs(eval_Q(fam, 1.0, hi)) < 1e-12
    assert abs(eval_Q(fam, 1.0, lo)) < 1e-12


# -- decompositions -----------------------------------------------------------

def test_uniform_lambda_atoms(unif):
    _, lam = decompose(unif, 1.0)
    assert sorted(lam.atoms) == [(-1.0, 0.5), (1.0, 0.5)]
    assert not lam.pieces


def test_gaussian_swept_mass(gauss):
    gamma, lam = decompose(gauss, 1.0)
    m = math.exp(-0.5) / math.sqrt(2 * math.pi)
    assert gamma.mass() == pytest.approx(m, rel=1e-10)
    assert lam.mass() == pytest.approx(m, rel=1e-10)
    assert gauss.m(1.0) == pytest.approx(0.2420, abs=5e-5)


def test_atom_mix_gamma_at_zero(atoms):
    gamma, _ = decompose(atoms, 0.0)
    assert gamma.atoms == ((0.0, 1.0),) or list(gamma.atoms) == [(0.0, 1.0)]


@pytest.mark.parametrize("name", ["gaussian", "exp-brownian", "uniform", "atom-mix"])
@pytest.mark.parametrize("t", [0.3, 1.0, 2.5])
def test_gamma_lambda_balance(name, t):
    gamma, lam = get_family(name).decompose(t)
    assert gamma.mass() == pytest.approx(lam.mass(), abs=1e-8)
    assert gamma.mean() == pytest.approx(lam.mean(), abs=1e-8)


@pytest.mark.parametrize("name", ["gaussian", "exp-brownian"])
@pytest.mark.parametrize("t", [0.2, 1.0])
def test_mass_balance_by_quadrature(name, t):
    fam = get_family(name)
    lo, hi = fam.x_range(t)
    lg, rg = (float(v) for v in fam.gamma_support(t))
    pts = [lg, rg]
    neg = lambda x: max(-float(fam.density_rate(t, x)), 0.0)
    pos = lambda x: max(float(fam.density_rate(t, x)), 0.0)
    q = lambda f: integrate.quad(f, lo, hi, points=pts, epsabs=1e-13, limit=400)[0]
    assert q(neg) == pytest.approx(q(pos), abs=1e-8)
    assert q(lambda x: x * neg(x)) == pytest.approx(q(lambda x: x * pos(x)), abs=1e-8)
    assert q(neg) == pytest.approx(fam.m(t), abs=1e-8)


# -- convex order -------------------------------------------------------------

@pytest.mark.parametrize("name", ["gaussian", "uniform", "exp-brownian"])
def test_convex_order_holds(name):
    fam = get_family(name)
    rep = check_convex_order(fam, np.linspace(0.1, 1, 10), np.linspace(-3, 3, 121)
                             if name != "exp-brownian" else np.linspace(0.01, 4, 121))
    assert rep.max_violation <= 1e-10
    assert rep.mass_error <= 1e-8 and rep.mean_error <= 1e-8


class _Reversed(MarginalFamily):
    """Negative control: the Gaussian family run backwards in time."""

    name = "reversed"

    def __init__(self, base, T):
        self.base, self.T, self.mean = base, T, base.mean

    def potential(self, t, x):
        return self.base.potential(self.T + 0.1 - t, x)


def test_convex_order_detects_reversal(gauss):
    rep = check_convex_order(_Reversed(gauss, 1.0), np.linspace(0.1, 1, 10),
                             np.linspace(-3, 3, 61), moments=False)
    assert rep.max_violation > 1e-3
    assert not rep.ok


# -- self-similar wrapper -----------------------------------------------------

def test_gaussian_profile_scaling():
    fam = self_similar_family(gaussian_profile())
    assert fam.density(4.0, 0.0) == pytest.approx(0.19947, abs=1e-5)
    assert fam.density(4.0, 0.0) == pytest.approx(1 / (2 * math.sqrt(2 * math.pi)), rel=1e-14)


def test_uniform_profile_scaling():
    fam = self_similar_family(uniform_profile())
    assert fam.density(2.0, 1.0) == pytest.approx(0.25, abs=1e-14)


def test_gaussian_profile_central_interval():
    fam = self_similar_family(gaussian_profile())
    for t in (0.25, 1.0, 9.0):
        lg, rg = fam.gamma_support(t)
        assert (float(lg), float(rg)) == pytest.approx((-math.sqrt(t), math.sqrt(t)), abs=1e-12)


def test_profile_scaling_identities():
    fam = self_similar_family(gaussian_profile())
    prof = fam.profile
    t, y = 2.7, np.linspace(-3, 3, 13)
    z = y * t ** -0.5
    np.testing.assert_allclose(fam.density(t, y), t ** -0.5 * prof.z_density(z), rtol=1e-13)
    np.testing.assert_allclose(fam.density_rate(t, y), t ** -1.5 * prof.zeta(z),
                               rtol=1e-12, atol=1e-15)
    inner = np.abs(z) < 1
    # the bound is the supremum itself, attained at z = 0
    assert np.all(fam.rate(t, y[inner]) <= prof.rate_bound_constant / t * (1 + 1e-14))


def test_tabulated_profile_rejects_bad_mean():
    z = np.linspace(-1, 3, 41)
    rho = np.full(z.size, 0.25)
    with pytest.raises(InvalidProfile):
        tabulated_profile(z, rho, 0.5)


def test_tabulated_profile_rejects_bad_mass():
    z = np.linspace(-2, 2, 41)
    with pytest.raises(InvalidProfile):
        tabulated_profile(z, np.full(z.size, 0.5), 0.5)


def test_profile_document(tmp_path):
    p = tmp_path / "prof.json"
    p.write_text('{"alpha": 0.5, "z_density": "gaussian"}')
    fam = get_family(f"self-similar:{p}")
    assert fam.density(1.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-14)
    with pytest.raises(InvalidProfile):
        load_profile({"alpha": 0.5})


def test_unknown_family():
    with pytest.raises(UnsupportedFamily):
        get_family("cauchy")


# -- identities by finite differences ----------------------------------------

@pytest.mark.parametrize("name", ["gaussian", "exp-brownian", "uniform", "atom-mix"])
def test_potential_rate_is_twice_q(name):
    fam = get_family(name)
    lo, hi = fam.x_range(0.8)
    x = np.linspace(lo, hi, 57)[1:-1]
    if name == "uniform":
        x = x[np.abs(np.abs(x) - 0.8) > 1e-3]
    np.testing.assert_allclose(fd_t(fam.potential, 0.8, x), 2 * fam.q(0.8, x), atol=1e-5)


@pytest.mark.parametrize("name", ["gaussian", "exp-brownian"])
def test_potential_curvature_is_twice_density(name):
    fam = get_family(name)
    lo, hi = fam.x_range(0.8)
    x = np.linspace(lo, hi, 57)[1:-1]
    np.testing.assert_allclose(fd_xx(fam.potential, 0.8, x), 2 * fam.density(0.8, x), atol=1e-5)


@pytest.mark.parametrize("name", ["gaussian", "exp-brownian", "uniform"])
@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 3.0])
def test_density_mass_and_mean(name, t):
    fam = get_family(name)
    assert fam.expect(t, lambda x: 1.0) == pytest.approx(1.0, abs=1e-8)
    assert fam.expect(t, lambda x: x) == pytest.approx(fam.mean, abs=1e-8)


def test_gaussian_rate_bound_decreases(gauss):
    K = [gauss.rate_bound(t) for t in np.linspace(0.05, 2, 40)]
    assert np.all(np.diff(K) <= 0)
    assert gauss.rate_bound(0.5) == pytest.approx(1.0)


# -- properties ---------------------------------------------------------------

names = st.sampled_from(["gaussian", "exp-brownian", "uniform", "atom-mix"])


@given(name=names, t=st.floats(0.02, 3.0), u=st.floats(0.0, 1.0))
def test_q_nonnegative(name, t, u):
    fam = get_family(name)
    lo, hi = fam.x_range(t)
    x = lo + u * (hi - lo)
    assert fam.q(t, x) >= -1e-15


@given(name=names, t=st.floats(0.02, 3.0), u=st.floats(0.001, 0.999))
def test_rate_within_bound(name, t, u):
    fam = get_family(name)
    lo, hi = fam.x_range(t)
    x = lo + u * (hi - lo)
    if fam.density(t, x) > 0:
        r = fam.rate(t, x)
        assert 0 <= r <= fam.rate_bound(t) * (1 + 1e-12)


@given(name=names, t=st.floats(0.02, 3.0))
def test_support_endpoint_ordering(name, t):
    fam = get_family(name)
    lm, rm = fam.support(t)
    ll, rl = fam.lambda_support(t)
    lg, rg = fam.gamma_support(t)
    assert lm <= ll <= lg <= rg <= rl <= rm


@given(t1=st.floats(0.05, 2.0), dt=st.floats(0.0, 1.0), x=st.floats(-4, 4))
def test_gaussian_potential_monotone_in_t(t1, dt, x):
    fam = get_family("gaussian")
    assert fam.potential(t1 + dt, x) >= fam.potential(t1, x) - 1e-14
