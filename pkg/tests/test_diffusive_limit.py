import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from milne_bl.diffusive_limit import (
    FLUX_NEUMANN_CONSTANT,
    STATED_NEUMANN_CONSTANT,
    BallProblem,
    _pairwise_sum,
    boundary_compatibility,
    boundary_layer_datum,
    convergence_study,
    cosine_direction,
    g_value,
    hitting_time,
    interior_u0,
    mc_solve,
    sample_cycle,
)
from milne_bl.solver import IncompatibilityError


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_hitting_time_lands_on_sphere():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(-0.5, 0.5, 3)
        w = _unit(rng.normal(size=3))
        tb, y = hitting_time(x, w, 0.2)
        assert_allclose(np.linalg.norm(y), 1.0, rtol=1e-13)
        assert_allclose(x - 0.2 * tb * w, y, atol=1e-13)
        assert tb > 0


def test_hitting_time_from_boundary():
    n = np.array([0.0, 0.0, 1.0])
    w = _unit([0.0, 0.6, 0.8])  # w.n > 0: moves inward in backward time
    tb, y = hitting_time(n, w, 1.0)
    assert_allclose(tb, 1.6, rtol=1e-14)
    assert_allclose(np.linalg.norm(y), 1.0, rtol=1e-14)
    with pytest.raises(ValueError):
        hitting_time(n, -w, 1.0)
    with pytest.raises(ValueError):
        hitting_time(np.array([0.0, 0.0, 1.1]), w, 1.0)


def test_cosine_law_moments():
    rng = np.random.default_rng(1)
    n = _unit([0.3, -0.2, 0.9])
    ws = np.array([cosine_direction(n, *rng.random(2)) for _ in range(20000)])
    mu = ws @ n
    assert np.all(mu > 0)
    assert_allclose(np.linalg.norm(ws, axis=1), 1.0, rtol=1e-13)
    # density mu/pi on the hemisphere: E[mu] = 2/3, E[mu^2] = 1/2
    assert abs(mu.mean() - 2 / 3) < 4 * mu.std() / math.sqrt(mu.size)
    assert abs((mu**2).mean() - 0.5) < 4 * (mu**2).std() / math.sqrt(mu.size)


def test_boundary_compatibility_values():
    assert_allclose(boundary_compatibility("cos_theta"), 0.0, atol=1e-12)
    assert_allclose(boundary_compatibility("p2"), 0.0, atol=1e-12)
    assert_allclose(boundary_compatibility("one"), -4 * math.pi**2, rtol=1e-13)
    with pytest.raises(IncompatibilityError):
        BallProblem(0.4, g_mode="one")
    with pytest.raises(ValueError):
        g_value("two", np.zeros(3))


def test_tally_radius_is_checked():
    with pytest.raises(ValueError):
        BallProblem(0.2, tally_points=(((0.0, 0.0, 0.9), None),))


def test_interior_profile_is_harmonic_with_flux_slope():
    pb = BallProblem(0.4, g_mode="p2")
    u0 = interior_u0(pb, constant=1.0)
    x = np.array([0.1, -0.2, 0.3])
    h = 1e-4
    lap = sum((u0(x + h * e) - 2 * u0(x) + u0(x - h * e)) / h**2 for e in np.eye(3))
    assert abs(lap) < 1e-6
    fd = np.array([(u0(x + h * e) - u0(x - h * e)) / (2 * h) for e in np.eye(3)])
    assert_allclose(u0.gradient(x), fd, rtol=1e-7)
    # dU0/dr on r = 1 equals c * pi * g
    y = _unit([0.2, 0.1, 0.7])
    assert_allclose(u0.gradient(y) @ y, math.pi * g_value("p2", y), rtol=1e-12)
    assert interior_u0(BallProblem(0.4)).coef == pytest.approx(STATED_NEUMANN_CONSTANT * math.pi)


def test_boundary_layer_datum_constants():
    pb = BallProblem(0.4)
    ok = boundary_layer_datum(pb, interior_u0(pb, FLUX_NEUMANN_CONSTANT))
    assert abs(ok.defect) <= 1e-8
    assert_allclose(ok.normal_derivative, -0.75, rtol=1e-13)
    with pytest.raises(IncompatibilityError):
        boundary_layer_datum(pb, interior_u0(pb, STATED_NEUMANN_CONSTANT))


def test_direct_flight_expectation_is_exact():
    # no scattering, no reflection: score eps g(y) with probability exp(-t_b)
    x = (0.0, 0.2, 0.3)
    w = _unit([0.3, -0.1, -0.8])
    eps = 0.7
    pb = BallProblem(eps, n_samples=200000, seed=5, scatter=False, reflect=False,
                     tally_points=((x, (tuple(w),)),))
    (t,) = mc_solve(pb)
    tb, y = hitting_time(np.array(x), w, eps)
    expected = eps * float(g_value("cos_theta", y)) * math.exp(-tb)
    assert abs(t.estimate - expected) <= 4 * t.std_error


def test_direct_flight_isotropic_average_by_quadrature():
    x = np.array([0.0, 0.0, 0.5])
    eps = 1.0
    mu, wmu = np.polynomial.legendre.leggauss(64)
    ph = 2 * np.pi * np.arange(64) / 64
    total = 0.0
    for m, wm in zip(mu, wmu):
        s = math.sqrt(1 - m * m)
        for p in ph:
            w = np.array([s * math.cos(p), s * math.sin(p), m])
            tb, y = hitting_time(x, w, eps)
            total += wm * (2 * np.pi / 64) * math.exp(-tb) * y[2]
    expected = eps * total / (4 * np.pi)
    pb = BallProblem(eps, n_samples=400000, seed=9, scatter=False, reflect=False,
                     tally_points=((tuple(x), None),))
    (t,) = mc_solve(pb)
    assert abs(t.estimate - expected) <= 4 * t.std_error


def test_zero_datum_scores_zero():
    pb = BallProblem(0.4, g_mode="zero", n_samples=2000)
    assert all(t.estimate == 0.0 for t in mc_solve(pb))


def test_mc_is_deterministic_per_seed():
    pb = BallProblem(0.4, n_samples=3000, seed=11)
    a = [t.estimate for t in mc_solve(pb)]
    b = [t.estimate for t in mc_solve(pb)]
    c = [t.estimate for t in mc_solve(pb.replace(seed=12))]
    assert a == b
    assert a != c


def test_mc_against_nystrom_oracle_small():
    from nystrom_oracle import ubar

    x = (0.0, 0.0, 0.5)
    pb = BallProblem(0.4, n_samples=40000, seed=3, tally_points=((x, None),))
    (t,) = mc_solve(pb)
    assert abs(t.estimate - ubar(0.4, np.array(x), n=120)) <= 4 * t.std_error


def test_sample_cycle_reaches_horizon():
    pb = BallProblem(0.5)
    rng = np.random.default_rng(2)
    rec = sample_cycle(pb, (np.zeros(3), np.array([0.0, 0.0, 1.0])), rng, t_stop=20.0)
    assert rec.reason == "boundary-source"
    assert np.all(np.diff(rec.times) > 0)
    assert_allclose(np.linalg.norm(rec.footpoints, axis=1), 1.0, rtol=1e-12)
    rec = sample_cycle(pb, (np.zeros(3), np.array([0.0, 0.0, 1.0])), rng, k_max=3, t_stop=1e9)
    assert rec.reason == "truncation"


def test_pairwise_sum_accuracy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=10001)
    assert_allclose(_pairwise_sum(a.copy()), math.fsum(a), rtol=1e-13)
    assert _pairwise_sum(np.zeros(0)) == 0.0


def test_convergence_study_structure():
    tally = (((0.0, 0.0, 0.25), None),)
    table = convergence_study([0.8, 0.6, 0.4], BallProblem(0.8, n_samples=500, tally_points=tally))
    assert len(table.rows) == 3
    assert math.isfinite(table.slope)
    with pytest.raises(ValueError):
        convergence_study([0.4, 0.8, 0.2], BallProblem(0.8, n_samples=10))
