import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad, solve_ivp

from milne_bl.characteristics import (
    NoTurningPointError,
    OutOfReachError,
    classify,
    energy,
    eta_plus,
    g_integral,
    phi_prime,
    trace,
)
from milne_bl.geometry import CurvatureProfile, LocalGeometry, MilneConfig


@pytest.fixture(scope="module")
def geo():
    return LocalGeometry(MilneConfig(0.1), CurvatureProfile.constant(1.0, 2.0))


def _ode_path(geo, eta0, phi0, psi, t_end):
    """Characteristic ODE d eta/dt = sin(phi), d phi/dt = F cos(phi)."""

    def rhs(t, y):
        return [math.sin(y[1]), float(geo.force(y[0], psi)) * math.cos(y[1])]

    return solve_ivp(rhs, (0.0, t_end), [eta0, phi0], method="DOP853", rtol=1e-12, atol=1e-14,
                     dense_output=True)


def test_energy_conserved_along_ode_paths(geo):
    rng = np.random.default_rng(3)
    for _ in range(20):
        eta0 = rng.uniform(0, geo.slab_length)
        phi0 = rng.uniform(-1.4, 1.4)
        psi = rng.uniform(-np.pi, np.pi)
        sol = _ode_path(geo, eta0, phi0, psi, 1.0)
        E = energy(geo, sol.y[0], sol.y[1], psi)
        assert np.max(np.abs(E - E[0])) <= 1e-10


def test_trace_agrees_with_ode(geo):
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 20:
        eta0 = rng.uniform(0.2, geo.slab_length - 0.2)
        phi0 = rng.uniform(0.2, 1.3) * rng.choice([-1, 1])
        psi = rng.uniform(-np.pi, np.pi)
        sol = _ode_path(geo, eta0, phi0, psi, 0.15)
        eta1, phi1 = sol.y[0, -1], sol.y[1, -1]
        if not (0 < eta1 < geo.slab_length) or np.sign(phi1) != np.sign(phi0):
            continue
        new = trace(geo, classify(geo, eta0, phi0, psi), eta1 - eta0)
        assert_allclose(new.phi, phi1, atol=1e-9)
        checked += 1


def test_region_classification(geo):
    L = geo.slab_length
    assert classify(geo, 0.5, 0.3, 0.0).region == "I"
    # nearly normal incoming direction reaches L: region II
    assert classify(geo, 0.5, -1.4, 0.0).region == "II"
    # nearly grazing incoming direction turns before L: region III
    pt = classify(geo, 0.5, -0.05, 0.0)
    assert pt.region == "III"
    assert 0.5 < pt.eta_plus < L
    assert_allclose(float(geo.exp_neg_potential(pt.eta_plus, 0.0)), pt.energy, rtol=1e-12)


def test_region_boundary_goes_to_region_two(geo):
    L = geo.slab_length
    psi = 0.3
    eta = 0.4
    # energy exactly exp(-V(L)): the characteristic turns at L
    EL = float(geo.exp_neg_potential(L, psi))
    c = EL / float(geo.exp_neg_potential(eta, psi))
    phi = -math.acos(c)
    assert classify(geo, eta, phi, psi).region == "II"


def test_eta_plus_errors(geo):
    with pytest.raises(NoTurningPointError):
        eta_plus(geo, 0.1, 0.0)
    assert eta_plus(geo, 1.0, 0.0) == 0.0


def test_phi_prime_and_trace_reach(geo):
    pt = classify(geo, 0.5, -0.05, 0.0)
    with pytest.raises(OutOfReachError):
        phi_prime(geo, pt.energy, pt.eta_plus + 0.1, 0.0)
    with pytest.raises(OutOfReachError):
        trace(geo, pt, geo.slab_length)


def test_g_integral_flat_is_straight_line():
    geo = LocalGeometry(MilneConfig(0.1), CurvatureProfile.classical())
    for phi in (0.1, 0.7, 1.4):
        E = math.cos(phi)
        assert_allclose(g_integral(geo, E, 0.0, 0.2, 1.1), 0.9 / math.sin(phi), rtol=1e-13)


@pytest.mark.parametrize("phi,psi", [(0.6, 0.0), (0.2, 1.0), (1.2, 2.0)])
def test_g_integral_matches_adaptive_quadrature(geo, phi, psi):
    eta_hi = 0.9
    E = float(energy(geo, eta_hi, phi, psi))
    integrand = lambda x: 1.0 / math.sin(phi_prime(geo, E, x, psi))  # noqa: E731
    ref, _ = quad(integrand, 0.1, eta_hi, epsabs=1e-14, epsrel=1e-13, limit=200)
    assert_allclose(g_integral(geo, E, psi, 0.1, eta_hi), ref, rtol=1e-10)


def test_g_integral_up_to_turning_point(geo):
    psi = 0.0
    pt = classify(geo, 0.3, -0.08, psi)
    tp = pt.eta_plus
    # x = tp - u^2 removes the inverse-square-root singularity; with E = exp(-V(tp)),
    # sin(phi')^2 = 1 - exp(-2 (V(tp) - V(x)))

    def smooth(u):
        dv = float(geo.potential_step(tp - u * u, u * u, psi))
        return 2.0 * u / math.sqrt(-math.expm1(-2.0 * dv))

    ref, _ = quad(smooth, 0.0, math.sqrt(tp - 0.3), epsabs=1e-14, epsrel=1e-12)
    assert_allclose(g_integral(geo, pt.energy, psi, 0.3, tp), ref, rtol=1e-7)
