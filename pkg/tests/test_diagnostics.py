import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from milne_bl import diagnostics
from milne_bl.geometry import CurvatureProfile, MilneConfig
from milne_bl.phase_grid import norms
from milne_bl.solver import NORM_SIN2, MilneProblem, solve_inflow

SMALL = dict(n_eta=64, n_phi=16, n_psi=8)


@pytest.fixture(scope="module")
def equal_radii():
    pb = MilneProblem(MilneConfig(0.1), CurvatureProfile.constant(1.0), h=lambda p, q: np.sin(p),
                      **SMALL)
    return solve_inflow(pb)


@pytest.fixture(scope="module")
def unequal_radii():
    pb = MilneProblem(MilneConfig(0.1), CurvatureProfile.constant(1.0, 2.5),
                      h=lambda p, q: np.sin(p) + 0.3 * np.cos(p) * np.cos(q), **SMALL)
    return solve_inflow(pb)


def test_alpha_vanishes_at_far_end(equal_radii, unequal_radii):
    for sol in (equal_radii, unequal_radii):
        assert abs(diagnostics.alpha(sol, -1)) <= 1e-10


def test_beta_gives_fL(equal_radii):
    assert_allclose(diagnostics.fL_from_beta(equal_radii), equal_radii.f_L, rtol=1e-14)
    assert_allclose(diagnostics.beta(equal_radii, -1), equal_radii.f_L * NORM_SIN2, rtol=1e-14)


def test_flux_vanishes_for_equal_radii(equal_radii):
    # with R1 = R2 the plain sin(phi) moment is exactly orthogonal; the coarse test grid
    # resolves it to a few 1e-6 relative to ||f||
    scale = norms(equal_radii.f).l2_total
    assert np.max(np.abs(diagnostics.quasi_orthogonality_residual(equal_radii))) <= 1e-5 * scale


def test_quasi_orthogonality_with_curvature_difference(unequal_radii):
    res = diagnostics.quasi_orthogonality_residual(unequal_radii)
    m = diagnostics._rule(unequal_radii).moment(lambda s, p: s)
    assert np.max(np.abs(m)) > 1e-4  # the flux itself is not zero
    assert np.max(np.abs(res)) <= 1e-2 * np.max(np.abs(m))


def test_energy_identity_small(equal_radii, unequal_radii):
    for sol in (equal_radii, unequal_radii):
        a2 = diagnostics.alpha(sol)
        assert diagnostics.energy_identity_residual(sol) <= 5e-2 * np.max(np.abs(a2))


def test_linf_deviation_and_decay_fit(equal_radii):
    dev = diagnostics.linf_deviation(equal_radii)
    assert dev.shape == equal_radii.f.grid.eta_nodes.shape
    fit = diagnostics.decay_fit(equal_radii, 0.1)
    assert fit.k0_fitted > 0
    assert fit.valid
    eta = equal_radii.f.grid.eta_nodes
    sel = (eta >= fit.window[0]) & (eta <= fit.window[1])
    assert_allclose(fit.sup_weighted, np.max(np.exp(0.1 * eta[sel]) * dev[sel]), rtol=1e-14)


@pytest.mark.parametrize("window", [(0.0, 0.8), (0.2, 0.95), (0.5, 0.4)])
def test_decay_fit_window_validation(equal_radii, window):
    with pytest.raises(ValueError):
        diagnostics.decay_fit(equal_radii, 0.1, window)


def test_decay_fit_degenerate_for_constant_solution():
    pb = MilneProblem(MilneConfig(0.1, fixed_point_tol=1e-13), CurvatureProfile.constant(1.0),
                      h=2.0, **SMALL)
    fit = diagnostics.decay_fit(solve_inflow(pb))
    assert fit.degenerate
    assert not fit.valid


def test_weighted_derivative_norms(unequal_radii):
    n = diagnostics.weighted_derivative_norms(unequal_radii, tangential=False)
    assert n.sup_zeta_dphi >= 0 and n.sup_zeta_deta >= 0 and n.sup_dpsi > 0
    assert all(math.isnan(t) for t in n.sup_dtau)
    assert_allclose(n.ln_context, abs(math.log(0.1)) ** 8)
    n2 = diagnostics.weighted_derivative_norms(unequal_radii, tangential=True)
    # constant radii: no tangential dependence
    assert_allclose(n2.sup_dtau, (0.0, 0.0), atol=1e-14)
    assert_allclose(diagnostics.sup_weighted_dphi(unequal_radii), n.sup_zeta_dphi)


def test_grazing_sup_respects_selection(unequal_radii):
    full = diagnostics.sup_grazing_dphi(unequal_radii, eta_max=100.0, phi_max=2.0)
    near = diagnostics.sup_grazing_dphi(unequal_radii, eta_max=0.1, phi_max=0.5)
    assert near <= full


def test_equation_residual_decreases_with_resolution():
    res = []
    for n_eta, n_phi in ((48, 12), (96, 24)):
        pb = MilneProblem(MilneConfig(0.1), CurvatureProfile.constant(1.0, 2.0),
                          h=lambda p, q: np.sin(p), n_eta=n_eta, n_phi=n_phi, n_psi=8)
        res.append(diagnostics.equation_residual(solve_inflow(pb)))
    assert res[1] < res[0]
