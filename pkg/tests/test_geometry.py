import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from milne_bl.geometry import (
    CurvatureProfile,
    GeometryError,
    LocalGeometry,
    MilneConfig,
    cutoff_upsilon0,
)


def _geo(eps=0.1, r1=1.0, r2=2.0, tau=(0.0, 0.0), prof=None):
    prof = CurvatureProfile.constant(r1, r2) if prof is None else prof
    return LocalGeometry(MilneConfig(eps), prof, tau)


def test_slab_length_is_eps_power():
    cfg = MilneConfig(0.01, n_exponent=0.25)
    assert_allclose(cfg.slab_length, 0.01**-0.25, rtol=1e-15)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.2, 1.5])
def test_config_rejects_bad_epsilon(eps):
    with pytest.raises(ValueError):
        MilneConfig(eps)


def test_config_exponent_range():
    with pytest.raises(ValueError):
        MilneConfig(0.1, n_exponent=0.5)
    MilneConfig(0.1, n_exponent=0.5, allow_wide_exponent=True)
    with pytest.raises(ValueError):
        MilneConfig(0.1, n_exponent=0.7, allow_wide_exponent=True)


def test_profile_must_leave_room_for_slab():
    with pytest.raises(GeometryError):
        LocalGeometry(MilneConfig(0.5), CurvatureProfile.constant(0.1))


def test_force_matches_closed_form():
    geo = _geo(eps=0.1, r1=1.0, r2=2.0)
    eta = np.linspace(0.0, geo.slab_length, 7)[:, None]
    psi = np.linspace(-np.pi, np.pi, 9)[None, :]
    s2 = np.sin(psi) ** 2
    expected = -0.1 * (s2 / (1.0 - 0.1 * eta) + (1 - s2) / (2.0 - 0.1 * eta))
    assert_allclose(geo.force(eta, psi), expected, rtol=1e-14)


def test_potential_derivative_is_minus_force():
    geo = _geo()
    eta = np.linspace(0.05, geo.slab_length - 0.05, 11)
    psi = 0.7
    h = 1e-6
    fd = (geo.potential(eta + h, psi) - geo.potential(eta - h, psi)) / (2 * h)
    assert_allclose(fd, -geo.force(eta, psi), rtol=1e-8)
    assert_allclose(geo.potential(0.0, psi), 0.0, atol=0)


def test_potential_step_matches_difference():
    geo = _geo()
    eta_a = np.array([0.0, 0.3, 1.2])
    d = np.array([1e-9, 0.2, 0.5])
    for psi in (0.0, 0.4, np.pi / 2):
        direct = geo.potential(eta_a + d, psi) - geo.potential(eta_a, psi)
        assert_allclose(geo.potential_step(eta_a, d, psi), direct, rtol=1e-7, atol=1e-16)


def test_force_split_recombines():
    geo = _geo(r1=1.0, r2=3.0)
    eta = np.linspace(0, geo.slab_length, 5)
    ft, g = geo.force_split(eta)
    for psi in (0.0, 0.3, 1.1, np.pi / 2):
        assert_allclose(ft + g * np.cos(psi) ** 2, geo.force(eta, psi), rtol=1e-13)


def test_zeta_properties():
    geo = _geo()
    rng = np.random.default_rng(1)
    eta = rng.uniform(0, geo.slab_length, 200)
    phi = rng.uniform(-np.pi / 2, np.pi / 2, 200)
    psi = rng.uniform(-np.pi, np.pi, 200)
    z = geo.zeta(eta, phi, psi)
    assert np.all((z >= 0) & (z <= 1))
    # vanishes exactly on the grazing set at the boundary
    assert_allclose(geo.zeta(0.0, 0.0, psi), 0.0, atol=0)
    assert_allclose(geo.zeta(0.0, phi, psi), np.abs(np.sin(phi)), atol=1e-15)


def test_classical_profile_has_no_force():
    geo = _geo(prof=CurvatureProfile.classical())
    assert geo.is_flat
    assert_allclose(geo.force(np.linspace(0, 1, 5), 0.3), 0.0, atol=0)
    assert_allclose(geo.potential(np.linspace(0, 1, 5), 0.3), 0.0, atol=0)


@pytest.mark.parametrize("i", [0, 1])
def test_tau_derivative_of_force_by_finite_differences(i):
    prof = CurvatureProfile.modulated(2.0, 1.0, 0.2, 0.1)
    tau = np.array([0.3, -0.4])
    geo = _geo(prof=prof, tau=tuple(tau))
    eta = np.linspace(0, geo.slab_length, 6)[:, None]
    psi = np.linspace(-np.pi, np.pi, 8, endpoint=False)[None, :]
    h = 1e-6
    e = np.zeros(2)
    e[i] = h
    fd = (geo.at(tau + e).force(eta, psi) - geo.at(tau - e).force(eta, psi)) / (2 * h)
    assert_allclose(geo.force_tau_derivative(eta, psi, i), fd, rtol=1e-6, atol=1e-12)


def test_psi_derivative_of_force_by_finite_differences():
    geo = _geo(r1=1.0, r2=2.5)
    eta = np.linspace(0, geo.slab_length, 6)[:, None]
    psi = np.linspace(-3, 3, 13)[None, :]
    h = 1e-6
    fd = (geo.force(eta, psi + h) - geo.force(eta, psi - h)) / (2 * h)
    assert_allclose(geo.force_psi_derivative(eta, psi), fd, rtol=1e-6, atol=1e-12)


def test_modulated_profile_at_origin():
    prof = CurvatureProfile.modulated(2.0, 1.0, 0.2, 0.1)
    assert prof.r1((0.0, 0.0)) == 2.0
    assert_allclose(prof.dr1_dtau((0.0, 0.0)), (0.4, 0.0))
    with pytest.raises(ValueError):
        CurvatureProfile.modulated(amp1=1.2)


def test_cutoff_is_smooth_partition():
    prof = CurvatureProfile.constant(2.0)
    mu = np.linspace(0, 2, 401)
    u = cutoff_upsilon0(mu, prof)
    assert_allclose(u[mu <= 0.5], 1.0)
    assert_allclose(u[mu >= 1.0], 0.0)
    assert np.all(np.diff(u) <= 1e-15)
    assert cutoff_upsilon0(0.7, CurvatureProfile.classical()) == 1.0
    with pytest.raises(ValueError):
        cutoff_upsilon0(-1.0, prof)


def test_constant_profile_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        CurvatureProfile.constant(-1.0)
    assert math.isinf(CurvatureProfile.classical().r_min)
