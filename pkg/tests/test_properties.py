import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from milne_bl.characteristics import classify, energy, trace
from milne_bl.diffusive_limit import cosine_direction, hitting_time
from milne_bl.geometry import CurvatureProfile, LocalGeometry, MilneConfig

GEO = LocalGeometry(MilneConfig(0.1), CurvatureProfile.constant(1.0, 2.0))
L = GEO.slab_length

depth = st.floats(0.0, L)
angle = st.floats(-1.5, 1.5).filter(lambda p: abs(p) > 1e-3)
azimuth = st.floats(-math.pi, math.pi)
unit = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 0.1
)


@settings(max_examples=200, deadline=None)
@given(depth, depth, azimuth)
def test_potential_increment_is_additive(a, b, psi):
    m = 0.5 * (a + b)
    lhs = GEO.potential_increment(a, b, psi)
    rhs = GEO.potential_increment(a, m, psi) + GEO.potential_increment(m, b, psi)
    assert_allclose(lhs, rhs, atol=1e-14)


@settings(max_examples=200, deadline=None)
@given(depth, angle, azimuth, st.floats(0.0, 1.0))
def test_trace_preserves_energy_and_branch(eta, phi, psi, frac):
    pt = classify(GEO, eta, phi, psi)
    if pt.region == "III":
        target = eta + frac * (pt.eta_plus - eta)
    elif phi > 0:
        target = frac * eta
    else:
        target = eta + frac * (L - eta)
    new = trace(GEO, pt, target - eta)
    assert abs(float(energy(GEO, new.eta, new.phi, psi)) - pt.energy) <= 1e-12
    assert math.copysign(1.0, new.phi) == math.copysign(1.0, phi) or new.phi == 0.0


@settings(max_examples=200, deadline=None)
@given(unit, st.floats(0.0, 0.95), unit)
def test_hitting_point_on_sphere(xdir, r, wdir):
    x = r * np.asarray(xdir) / np.linalg.norm(xdir)
    w = np.asarray(wdir) / np.linalg.norm(wdir)
    tb, y = hitting_time(x, w, 0.3)
    assert tb >= 0
    assert_allclose(np.linalg.norm(y), 1.0, rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(unit, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_cosine_direction_points_inward(ndir, u1, u2):
    n = np.asarray(ndir) / np.linalg.norm(ndir)
    w = cosine_direction(n, u1, u2)
    assert_allclose(np.linalg.norm(w), 1.0, rtol=1e-12)
    assert w @ n >= -1e-15
