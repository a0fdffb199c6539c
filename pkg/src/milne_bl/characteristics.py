"""Characteristics of the (eta, phi) flow at fixed (tau, psi).

Along ``d eta/ds = sin(phi)``, ``d phi/ds = F cos(phi)`` the energy
``E = exp(-V(eta, psi)) cos(phi)`` is conserved, so every characteristic is
described by ``E`` and the sign of ``sin(phi)``.  Incoming characteristics
(``sin(phi) < 0``) either come back from the far end of the slab after a
specular reflection (region II) or turn around at the depth ``eta_plus``
where ``exp(-V) = |E|`` (region III).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import LocalGeometry

REGION_I = "I"
REGION_II = "II"
REGION_III = "III"

_ARCCOS_SLACK = 1e-14
_BISECTION_STEPS = 80


class OutOfReachError(ValueError):
    """The characteristic turns around before reaching the requested depth."""


class NoTurningPointError(ValueError):
    """|E| < exp(-V(L)): the characteristic reaches the far end of the slab."""


@dataclass(frozen=True)
class CharPoint:
    eta: float
    phi: float
    psi: float
    energy: float
    region: str
    eta_plus: float = math.inf


def energy(geo: LocalGeometry, eta, phi, psi):
    """Conserved energy E = exp(-V(eta, psi)) cos(phi)."""
    return geo.exp_neg_potential(eta, psi) * np.cos(phi)


def _active_limit(geo: LocalGeometry, psi: float) -> float:
    """Depth at which exp(-V(., psi)) vanishes (inf if V stays bounded)."""
    k1, k2 = geo.curvatures
    s2 = math.sin(psi) ** 2
    lim = math.inf
    for w, k in ((s2, k1), (1.0 - s2, k2)):
        if w > 0 and k > 0:
            lim = min(lim, 1.0 / (geo.epsilon * k))
    return lim


def classify(geo: LocalGeometry, eta: float, phi: float, psi: float) -> CharPoint:
    """Energy, region tag and turning depth of a phase point."""
    E = float(energy(geo, eta, phi, psi))
    if math.sin(phi) > 0:
        return CharPoint(eta, phi, psi, E, REGION_I)
    L = geo.slab_length
    if abs(E) <= float(geo.exp_neg_potential(L, psi)):
        return CharPoint(eta, phi, psi, E, REGION_II)
    return CharPoint(eta, phi, psi, E, REGION_III, eta_plus(geo, E, psi))


def _cos_ratio(geo: LocalGeometry, E: float, eta_target, psi):
    return E / geo.exp_neg_potential(eta_target, psi)


def phi_prime(geo: LocalGeometry, E: float, eta_target, psi):
    """Non-negative polar angle on the characteristic of energy E at depth eta_target.

    Raises
    ------
    OutOfReachError
        If ``exp(V(eta_target)) |E| > 1`` beyond round-off slack.
    """
    c = np.asarray(_cos_ratio(geo, E, eta_target, psi), dtype=float)
    if np.any(np.abs(c) > 1.0 + _ARCCOS_SLACK):
        raise OutOfReachError("target depth lies beyond the turning point")
    c = np.clip(c, -1.0, 1.0)
    s = np.sqrt((1.0 - c) * (1.0 + c))
    out = np.arctan2(s, c)
    return out if out.ndim else float(out)


def eta_plus(geo: LocalGeometry, E: float, psi: float) -> float:
    """Turning depth where exp(-V(eta_plus, psi)) = |E|, by bisection on [0, L]."""
    a = abs(float(E))
    L = geo.slab_length
    if a > 1.0 + _ARCCOS_SLACK:
        raise ValueError("|E| cannot exceed 1")
    eL = float(geo.exp_neg_potential(L, psi))
    if a < eL:
        raise NoTurningPointError(f"|E|={a:.6g} < exp(-V(L))={eL:.6g}")
    if a >= 1.0:
        return 0.0
    lo, hi = 0.0, L
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if float(geo.exp_neg_potential(mid, psi)) > a:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def turning_depth(geo: LocalGeometry, eta: float, sin_phi: float, psi: float) -> float:
    """Depth t >= eta where the characteristic through (eta, phi) turns.

    Unlike :func:`eta_plus` the search is not limited to the slab, so the
    result may be a "virtual" turning point beyond L; returns inf if the
    potential stays bounded (flat boundary) or ``cos(phi) = 0``.
    """
    target = -0.5 * math.log1p(-sin_phi * sin_phi)  # -ln cos(phi)
    lim = _active_limit(geo, psi)
    if not math.isfinite(lim) or not math.isfinite(target):
        return math.inf
    lo, hi = eta, lim
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(geo.potential_increment(eta, mid, psi)) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sin_prime(geo: LocalGeometry, E: float, psi: float, xi, tstar: float, dist=None):
    """sin(phi') on the characteristic, written relative to its turning depth."""
    xi = np.asarray(xi, dtype=float)
    if math.isfinite(tstar):
        d = tstar - xi if dist is None else dist
        dv = geo.potential_step(xi, d, psi)
        return np.sqrt(-np.expm1(-2.0 * dv))
    c = E / geo.exp_neg_potential(xi, psi)
    return np.sqrt(np.clip((1.0 - c) * (1.0 + c), 0.0, None))


def g_integral(geo: LocalGeometry, E: float, psi: float, eta_lo: float, eta_hi: float,
               n_panels: int = 16, order: int = 20) -> float:
    """Attenuation G = ∫_{eta_lo}^{eta_hi} dxi / sin(phi'(xi)).

    A square-root substitution about the (real or virtual) turning depth
    removes the integrable singularity before composite Gauss quadrature.
    """
    if eta_hi < eta_lo:
        raise ValueError("need eta_lo <= eta_hi")
    if eta_hi == eta_lo:
        return 0.0
    phi_prime(geo, E, eta_hi, psi)  # reachability check
    c = min(1.0, abs(float(E)) / float(geo.exp_neg_potential(eta_hi, psi)))
    sin_hi = math.sqrt((1.0 - c) * (1.0 + c))
    tstar = turning_depth(geo, eta_hi, sin_hi, psi) if abs(E) > 0 else math.inf
    x, w = np.polynomial.legendre.leggauss(order)
    width = eta_hi - eta_lo
    total = 0.0
    if math.isfinite(tstar) and tstar - eta_hi < 4.0 * width:
        u_lo, u_hi = math.sqrt(max(tstar - eta_hi, 0.0)), math.sqrt(tstar - eta_lo)
        # panels graded towards the turning point, where the integrand bends most
        edges = u_lo + (u_hi - u_lo) * np.linspace(0.0, 1.0, n_panels + 1) ** 2
        for a, b in zip(edges[:-1], edges[1:]):
            u = 0.5 * (a + b) + 0.5 * (b - a) * x
            sp = _sin_prime(geo, E, psi, tstar - u * u, tstar, dist=u * u)
            total += 0.5 * (b - a) * np.dot(w, 2.0 * u / sp)
        return float(total)
    edges = np.linspace(eta_lo, eta_hi, n_panels + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        xi = 0.5 * (a + b) + 0.5 * (b - a) * x
        sp = _sin_prime(geo, E, psi, xi, tstar)
        total += 0.5 * (b - a) * np.dot(w, 1.0 / sp)
    return float(total)


def trace(geo: LocalGeometry, pt: CharPoint, delta_eta: float) -> CharPoint:
    """Move along the characteristic by ``delta_eta`` in depth, keeping the branch.

    The sign of ``sin(phi)`` is preserved, so the target must lie on the same
    monotone piece of the characteristic (no turning point in between).
    """
    if delta_eta == 0.0:
        return pt
    eta_new = pt.eta + delta_eta
    if eta_new < 0 or eta_new > geo.slab_length:
        raise OutOfReachError("target depth outside the slab")
    # cos(phi) >= 0 on (-pi/2, pi/2), so E >= 0 and phi' is the |phi| of the new point
    ang = phi_prime(geo, pt.energy, eta_new, pt.psi)
    phi_new = ang if math.sin(pt.phi) > 0 else -ang
    return classify(geo, eta_new, phi_new, pt.psi)
