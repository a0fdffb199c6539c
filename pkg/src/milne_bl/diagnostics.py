"""Functionals and verification probes evaluated on Milne solutions.

Angular moments use the solution's own angular rule when it carries one
(the separatrix-aware rule built by the solver); otherwise the phase-grid
quadrature is used.  ``<f, g>(eta)`` always denotes
``∫∫ f g cos(phi) dphi dpsi`` at fixed depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .phase_grid import FOUR_PI, bar, d_eta, d_phi, d_psi
from .solver import AngularRule, MilneSolution, NORM_SIN2, solve_tangential

DEGENERATE_LEVEL = 1e-12
MIN_R_SQUARED = 0.9


def _rule(sol: MilneSolution) -> AngularRule:
    if sol.rule is not None and sol.rule.f is not None:
        return sol.rule
    g = sol.f.grid
    shape = g.shape
    s = np.broadcast_to(g.sin_phi[None, :, None], shape)
    phi = np.broadcast_to(g.phi_nodes[None, :, None], shape)
    w = np.broadcast_to(np.outer(g.w_phi, g.w_psi)[None], shape)
    return AngularRule(s=s, phi=phi, w=w, psi=g.psi_nodes, f=sol.f.values)


def _pick(arr: np.ndarray, eta_index):
    if eta_index is None:
        return arr
    return float(arr[eta_index])


def alpha(sol: MilneSolution, eta_index: Optional[int] = None):
    """alpha(eta) = 1/2 <f, f sin(phi)>(eta); vanishes at L under specular reflection."""
    r = _rule(sol)
    return _pick(0.5 * r.moment(lambda s, p: s, power=2), eta_index)


def beta(sol: MilneSolution, eta_index: Optional[int] = None):
    """beta(eta) = <sin^2(phi), f>(eta); beta(L) / (4 pi / 3) is f_L."""
    r = _rule(sol)
    return _pick(r.moment(lambda s, p: s * s), eta_index)


def _split_force(sol: MilneSolution, eta):
    """F = Ft(eta) + G(eta) cos^2(psi) with Ft = -V~' (V~ the psi = pi/2 potential)."""
    geo = sol.problem.geometry
    k1, k2 = geo.curvatures
    eps = geo.epsilon
    q1 = 1.0 - eps * k1 * eta
    q2 = 1.0 - eps * k2 * eta
    vt = -np.log1p(-eps * k1 * eta)
    G = -eps * (k2 / q2 - k1 / q1)
    return vt, G


def _cumulative_from_right(x, y):
    """∫_x^L y, by the antiderivative of a cubic spline."""
    if np.all(y == 0.0):
        return np.zeros_like(y)
    F = CubicSpline(x, y).antiderivative()
    return F(x[-1]) - F(x)


def _source_bar(sol: MilneSolution):
    src = sol.problem.source_values()
    if src is None:
        return None
    g = sol.f.grid
    return np.einsum("ijk,j,k->i", src, g.w_phi, g.w_psi) / FOUR_PI


def quasi_orthogonality_residual(sol: MilneSolution) -> np.ndarray:
    """<sin(phi), f>(eta) minus its representation through the curvature-difference term.

    Taking the plain angular moment of the equation gives, with m = <sin(phi), f>,
    q = <sin(phi) cos^2(psi), f> and m(L) = 0,

        m(eta) = 2 ∫_eta^L e^{2V~(eta) - 2V~(y)} (G q)(y) dy
                 - 4 pi ∫_eta^L e^{2V~(eta) - 2V~(y)} Sbar(y) dy.

    For R1 = R2 (G = 0) and no source the residual is just |m(eta)|.
    """
    r = _rule(sol)
    eta = sol.f.grid.eta_nodes
    m = r.moment(lambda s, p: s)
    vt, G = _split_force(sol, eta)
    q = r.moment(lambda s, p: s * np.cos(p) ** 2)
    integrand = np.exp(-2.0 * vt) * 2.0 * G * q
    sb = _source_bar(sol)
    if sb is not None:
        integrand = integrand - np.exp(-2.0 * vt) * FOUR_PI * sb
    rhs = np.exp(2.0 * vt) * _cumulative_from_right(eta, integrand)
    return m - rhs


def energy_identity_residual(sol: MilneSolution) -> float:
    """L2-in-eta residual of the energy identity

        1/2 d/deta <f, f sin(phi)> = -||f - fbar||^2 - Ft <f, f sin(phi)>
                                     - G <f cos^2(psi), f sin(phi)> + <S, f>

    with the eta-derivative taken by second-order differences on the grid.
    """
    src = sol.problem.source_values()
    g = sol.f.grid
    eta = g.eta_nodes
    if src is None:
        r = _rule(sol)
        fb = np.asarray(sol.fbar if sol.fbar is not None else bar(sol.f))
    else:  # the source lives on the grid, so use grid quadrature throughout
        r = _rule(MilneSolution(**{**sol.__dict__, "rule": None}))
        fb = bar(sol.f)
    a2 = r.moment(lambda s, p: s, power=2)
    lhs = 0.5 * np.gradient(a2, eta, edge_order=2)
    dev = r.f - fb[:, None, None]
    r_norm = r.integrate(dev * dev)
    _, G = _split_force(sol, eta)
    ft = -_vt_prime(sol, eta)
    cross = r.moment(lambda s, p: s * np.cos(p) ** 2, power=2)
    rhs = -r_norm - ft * a2 - G * cross
    if src is not None:
        rhs = rhs + np.einsum("ijk,ijk,j,k->i", src, sol.f.values, g.w_phi, g.w_psi)
    res = lhs - rhs
    return float(np.sqrt(np.dot(g.w_eta, res * res)))


def _vt_prime(sol: MilneSolution, eta):
    geo = sol.problem.geometry
    k1 = geo.curvatures[0]
    eps = geo.epsilon
    return eps * k1 / (1.0 - eps * k1 * eta)


def linf_deviation(sol: MilneSolution) -> np.ndarray:
    """max over grid directions of |f - f_L| at each eta node."""
    return np.max(np.abs(sol.f.values - sol.f_L), axis=(1, 2))


@dataclass
class DecayFit:
    k0_fitted: float
    window: tuple
    r_squared: float
    sup_weighted: float
    degenerate: bool = False

    @property
    def valid(self) -> bool:
        return (not self.degenerate) and math.isfinite(self.k0_fitted) and self.r_squared >= MIN_R_SQUARED


def decay_fit(sol: MilneSolution, k0_candidate: Optional[float] = None,
              window: Sequence[float] = (0.2, 0.8)) -> DecayFit:
    """Log-linear fit of max|f - f_L| over a window of relative depths.

    ``window`` is given as fractions of L and must avoid the first and last
    10% of the slab.  ``sup_weighted`` is sup over the window of
    exp(K0 eta) max|f - f_L| with K0 = ``k0_candidate`` (default from the
    problem configuration).
    """
    lo, hi = float(window[0]), float(window[1])
    if not (0.1 <= lo < hi <= 0.9):
        raise ValueError("decay window must lie inside [0.1 L, 0.9 L]")
    k0 = sol.problem.cfg.decay_rate_k0 if k0_candidate is None else float(k0_candidate)
    eta = sol.f.grid.eta_nodes
    L = eta[-1]
    dev = linf_deviation(sol)
    win = (lo * L, hi * L)
    sel = (eta >= win[0]) & (eta <= win[1])
    if np.all(dev < DEGENERATE_LEVEL):
        return DecayFit(0.0, win, 0.0, float(np.max(dev[sel] * np.exp(k0 * eta[sel]))), True)
    x, y = eta[sel], np.log(np.maximum(dev[sel], np.finfo(float).tiny))
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    sup_w = float(np.max(np.exp(k0 * x) * dev[sel]))
    return DecayFit(float(-slope), win, r2, sup_w)


@dataclass
class DerivativeNorms:
    sup_zeta_deta: float
    sup_zeta_dphi: float
    sup_dpsi: float
    sup_dtau: tuple
    ln_context: float


def _zeta(sol: MilneSolution):
    g = sol.f.grid
    return sol.problem.geometry.zeta(
        g.eta_nodes[:, None, None], g.phi_nodes[None, :, None], g.psi_nodes[None, None, :]
    )


def weighted_derivative_norms(sol: MilneSolution, k0: Optional[float] = None,
                              tangential: bool = True) -> DerivativeNorms:
    """Weighted sup norms of the derivatives of f.

    eta and phi derivatives carry the kinetic weight zeta; all carry
    exp(K0 eta).  The tau derivatives come from :func:`solve_tangential`
    (data assumed tau-independent) unless ``tangential`` is False, in which
    case they are reported as NaN.
    """
    g = sol.f.grid
    k0 = sol.problem.cfg.decay_rate_k0 if k0 is None else float(k0)
    wt = np.exp(k0 * g.eta_nodes)[:, None, None]
    z = _zeta(sol)
    out_eta = float(np.max(wt * z * np.abs(d_eta(sol.f))))
    out_phi = float(np.max(wt * z * np.abs(d_phi(sol.f))))
    out_psi = float(np.max(wt * np.abs(d_psi(sol.f))))
    taus = (math.nan, math.nan)
    if tangential:
        taus = tuple(
            float(np.max(wt * np.abs(solve_tangential(sol.problem, sol, i).f.values)))
            for i in (0, 1)
        )
    return DerivativeNorms(out_eta, out_phi, out_psi, taus, lnnorm_context(sol.problem.cfg.epsilon))


def sup_weighted_dphi(sol: MilneSolution, k0: Optional[float] = None) -> float:
    """sup exp(K0 eta) zeta |df/dphi| over the grid."""
    g = sol.f.grid
    k0 = sol.problem.cfg.decay_rate_k0 if k0 is None else float(k0)
    wt = np.exp(k0 * g.eta_nodes)[:, None, None]
    return float(np.max(wt * _zeta(sol) * np.abs(d_phi(sol.f))))


def sup_grazing_dphi(sol: MilneSolution, eta_max: float = 0.1, phi_max: float = 0.5) -> float:
    """Unweighted sup |df/dphi| over nodes with eta <= eta_max and |phi| <= phi_max."""
    g = sol.f.grid
    de = d_phi(sol.f)
    sel_e = g.eta_nodes <= eta_max
    sel_p = np.abs(g.phi_nodes) <= phi_max
    return float(np.max(np.abs(de[np.ix_(sel_e, sel_p)])))


def lnnorm_context(eps: float) -> float:
    """|ln eps|^8, the growth factor appearing in the derivative bounds (reported only)."""
    return abs(math.log(eps)) ** 8


def equation_residual(sol: MilneSolution) -> float:
    """L2 norm of sin(phi) f_eta + F cos(phi) f_phi + f - fbar - S under grid differences.

    Limited by the finite-difference truncation error, so it measures grid
    resolution rather than the fixed-point tolerance.
    """
    g = sol.f.grid
    geo = sol.problem.geometry
    F = geo.force(g.eta_nodes[:, None], g.psi_nodes[None, :])[:, None, :]
    f = sol.f.values
    res = (
        g.sin_phi[None, :, None] * d_eta(sol.f)
        + F * g.cos_phi[None, :, None] * d_phi(sol.f)
        + f
        - bar(sol.f)[:, None, None]
    )
    src = sol.problem.source_values()
    if src is not None:
        res = res - src
    per_eta = np.einsum("ijk,j,k->i", res * res, g.w_phi, g.w_psi)
    return float(np.sqrt(np.dot(g.w_eta, per_eta)))


def fL_from_beta(sol: MilneSolution) -> float:
    return beta(sol, -1) / NORM_SIN2
