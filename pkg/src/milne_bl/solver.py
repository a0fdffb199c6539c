"""Source-iteration solver for the curvature-corrected Milne problem.

    sin(phi) df/deta + F(eta, psi) cos(phi) df/dphi + f - fbar = S,
    f(0, phi, psi) = h(phi, psi)   for sin(phi) > 0,
    f(L, phi, psi) = f(L, -phi, psi).

The mild formulation ``f = K[h] + T[fbar + S]`` is evaluated along long
characteristics (see :mod:`milne_bl._kernels`).  Because the only coupling
between characteristics is ``fbar(eta)``, the angular average of the kernel
rows is formed once and the fixed point is iterated on ``fbar`` alone.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from . import _kernels
from .geometry import CurvatureProfile, LocalGeometry, MilneConfig
from .phase_grid import FOUR_PI, Field, PhaseGrid, bar, d_phi, moment, p_flux

log = logging.getLogger(__name__)

Datum = Union[float, Callable]
Source = Union[None, Field, Callable]

NORM_SIN2 = FOUR_PI / 3.0  # ||sin(phi)||^2


class IncompatibilityError(ValueError):
    """Diffusive data violate the solvability condition."""

    def __init__(self, defect: float):
        super().__init__(f"compatibility defect {defect:.6e}")
        self.defect = defect


class NonConvergenceError(RuntimeError):
    def __init__(self, iterations: int, history):
        super().__init__(
            f"source iteration did not converge in {iterations} sweeps "
            f"(last update {history[-1]:.3e})"
        )
        self.iterations = iterations
        self.history = np.asarray(history)


@dataclass
class MilneProblem:
    """One Milne problem at fixed tangential position ``tau``.

    ``h`` is the in-flow datum, a constant or a vectorised ``h(phi, psi)``;
    ``S`` is a source field, a vectorised ``S(eta, phi, psi)`` or None.
    """

    cfg: MilneConfig
    prof: CurvatureProfile
    tau: tuple = (0.0, 0.0)
    h: Datum = 0.0
    S: Source = None
    boundary_kind: str = "inflow"
    p0: float = 0.0
    n_eta: int = 256
    n_phi: int = 32
    n_psi: int = 16
    eta_ratio: float = 1.15
    quad_order: int = 4
    n_aux: int = 16
    dg_max: float = 0.5
    g_cut: float = 40.0

    def __post_init__(self):
        if self.boundary_kind not in ("inflow", "diffusive"):
            raise ValueError(f"unknown boundary kind {self.boundary_kind!r}")
        self.tau = tuple(float(t) for t in self.tau)

    @cached_property
    def geometry(self) -> LocalGeometry:
        return LocalGeometry(self.cfg, self.prof, self.tau)

    @cached_property
    def grid(self) -> PhaseGrid:
        return PhaseGrid.build(
            self.cfg.slab_length, self.n_eta, self.n_phi, self.n_psi, self.eta_ratio
        )

    def datum(self, phi, psi):
        if callable(self.h):
            return np.broadcast_to(np.asarray(self.h(phi, psi), dtype=float), np.shape(phi * psi))
        return np.full(np.broadcast(phi, psi).shape, float(self.h))

    def source_values(self) -> Optional[np.ndarray]:
        if self.S is None:
            return None
        if isinstance(self.S, Field):
            if not self.S.grid.same_as(self.grid):
                raise ValueError("source field lives on a different grid")
            return self.S.values
        return self.grid.sample(self.S).values

    def replace(self, **changes) -> "MilneProblem":
        fields = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        fields.update(changes)
        new = MilneProblem(**fields)
        if "grid" in self.__dict__ and not {"cfg", "n_eta", "n_phi", "n_psi", "eta_ratio"} & changes.keys():
            new.__dict__["grid"] = self.grid
        return new


@dataclass
class MilneSolution:
    f: Field
    f_L: float
    f_L_tail: float
    iterations: int
    residual_history: np.ndarray
    problem: MilneProblem
    fbar: np.ndarray = field(repr=False, default=None)
    flux0: float = 0.0
    rule: Optional["AngularRule"] = field(repr=False, default=None)

    @property
    def fL_discrepancy(self) -> float:
        return abs(self.f_L - self.f_L_tail)


# ---------------------------------------------------------------------------
# kernel plumbing


@dataclass
class AngularRule:
    """Directions and weights of an angular quadrature at every eta node.

    ``s``/``phi``/``w`` have shape (n_eta, n_dir, n_psi); ``w`` includes the
    cos(phi) Jacobian and the psi weight, so ``Σ w g`` approximates
    ∫∫ g cos(phi) dphi dpsi at each eta.  ``f`` holds solution values.
    """

    s: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    psi: np.ndarray
    f: Optional[np.ndarray] = None

    def integrate(self, values) -> np.ndarray:
        return np.einsum("ijk,ijk->i", self.w, values)

    def moment(self, weight=None, power: int = 1) -> np.ndarray:
        """∫∫ weight(s, psi) f**power cos(phi) dphi dpsi at each eta node."""
        vals = self.f**power
        if weight is not None:
            vals = vals * weight(self.s, self.psi[None, None, :])
        return self.integrate(vals)


class _Sweep:
    """Characteristic kernel bound to one problem and one source field."""

    def __init__(self, problem: MilneProblem, source: Optional[np.ndarray]):
        self.problem = problem
        grid = problem.grid
        geo = problem.geometry
        self.grid = grid
        self.k1, self.k2 = geo.curvatures
        self.eps = geo.epsilon
        self.s_nodes = np.ascontiguousarray(grid.sin_phi)
        psi = grid.psi_nodes
        a1 = np.round(np.sin(psi) ** 2, 14)
        if source is None or self._symmetric(source, a1):
            keys, group = np.unique(a1, return_inverse=True)
            first = np.array([np.flatnonzero(group == g)[0] for g in range(keys.size)])
        else:
            group, first = np.arange(psi.size), np.arange(psi.size)
        # sin^2(psi) at psi = 0, +-pi/2 must be exactly 0 or 1: a stray 1e-32 weight
        # would activate a log singularity of the potential far outside the slab
        self.a1s = np.ascontiguousarray(a1[first])
        self.group = group
        ng = self.a1s.size
        self.wpsi_g = np.bincount(group, weights=grid.w_psi, minlength=ng)
        if source is None:
            self.Sg = np.zeros((1, 1, 1))
            self.has_S = False
        else:
            self.Sg = np.ascontiguousarray(source[:, :, first])
            self.has_S = True
        self.gx, self.gw, self.Itil = _kernels.gauss_tables(problem.quad_order)
        ne = grid.eta_nodes.size
        self.s_grid = np.ascontiguousarray(
            np.broadcast_to(self.s_nodes[None, :, None], (ne, self.s_nodes.size, ng))
        )
        self.barw_grid = np.ascontiguousarray(
            np.broadcast_to((np.outer(grid.w_phi, self.wpsi_g) / FOUR_PI)[None], self.s_grid.shape)
        )

    @staticmethod
    def _symmetric(src, a1) -> bool:
        for key in np.unique(a1):
            idx = np.flatnonzero(a1 == key)
            if not all(np.array_equal(src[:, :, idx[0]], src[:, :, i]) for i in idx[1:]):
                return False
        return True

    def run(self, y, m, want_mat: bool, aux: bool = False):
        p = self.problem
        if aux:
            s_eval, barw = self.aux_dirs
        else:
            s_eval, barw = self.s_grid, self.barw_grid
        return _kernels.walk(
            self.grid.eta_nodes, s_eval, self.s_nodes, self.k1, self.k2, self.eps, self.a1s,
            self.Sg, self.has_S, np.ascontiguousarray(y, dtype=float),
            np.ascontiguousarray(m, dtype=float), want_mat, barw,
            self.gx, self.gw, self.Itil, p.dg_max, p.g_cut,
        )

    def expand(self, arr):
        """(ne, n_dir, ngroup) -> (ne, n_dir, npsi)."""
        return arr[:, :, self.group]

    @cached_property
    def aux_dirs(self):
        """Angular rule split at phi = 0 and at the region II/III separatrix.

        On the incoming half the solution has a square-root kink where the
        characteristic turns exactly at eta = L; each piece uses Gauss nodes
        in u with phi - phi_sep proportional to u**2, which absorbs it.
        Returns (sin(phi) (ne, 3n, ng), bar weights (ne, 3n, ng)).
        """
        n = self.problem.n_aux
        eta = self.grid.eta_nodes
        L = eta[-1]
        u1, w1 = _unit_gauss(n)
        u2, w2 = _unit_gauss(2 * n)
        ne, ng = eta.size, self.a1s.size
        phi = np.empty((ne, 3 * n, ng))
        jac = np.empty((ne, 3 * n, ng))
        for g, a1 in enumerate(self.a1s):
            flat = _kernels.is_flat(self.k1, self.k2, a1)
            for j, ej in enumerate(eta):
                dv = 0.0 if flat else _kernels.dv_step(self.k1, self.k2, a1, self.eps, ej, L - ej)
                if dv <= 0.0:
                    # no turning characteristics: one piece on the incoming half
                    p_in = -0.5 * np.pi * (1.0 - u2**2)
                    j_in = np.pi * u2 * w2
                else:
                    sep = -np.arctan2(np.sqrt(-np.expm1(-2.0 * dv)), np.exp(-dv))
                    wa = sep + 0.5 * np.pi
                    pa = sep - wa * u1**2
                    ja = 2.0 * wa * u1 * w1
                    pb = sep * (1.0 - u1**2)
                    jb = -2.0 * sep * u1 * w1
                    p_in = np.concatenate([pa, pb])
                    j_in = np.concatenate([ja, jb])
                p_out = 0.5 * np.pi * u1**2
                j_out = np.pi * u1 * w1
                phi[j, :, g] = np.concatenate([p_in, p_out])
                jac[j, :, g] = np.concatenate([j_in, j_out])
        s = np.sin(phi)
        barw = jac * np.cos(phi) * self.wpsi_g[None, None, :] / FOUR_PI
        self._aux_phi = phi
        self._aux_jac = jac
        return np.ascontiguousarray(s), np.ascontiguousarray(barw)

    def aux_rule(self) -> AngularRule:
        self.aux_dirs
        phi = self.expand(self._aux_phi)
        w = self.expand(self._aux_jac) * np.cos(phi) * self.grid.w_psi[None, None, :]
        return AngularRule(s=np.sin(phi), phi=phi, w=w, psi=self.grid.psi_nodes)

    def entry_angle(self, phi: np.ndarray) -> np.ndarray:
        """phi at which the backward characteristic of each direction leaves eta = 0.

        ``phi`` has shape (ne, n_dir, npsi).
        """
        g = self.grid
        V = self.problem.geometry.potential(g.eta_nodes[:, None, None], g.psi_nodes[None, None, :])
        s, c = np.sin(phi), np.cos(phi)
        E = c * np.exp(-V)
        # 1 - E^2 = s^2 - c^2 expm1(-2V), free of cancellation near grazing
        sin0 = np.sqrt(np.clip(s * s - c * c * np.expm1(-2.0 * V), 0.0, None))
        return np.arctan2(sin0, E)

    @cached_property
    def grid_phi(self) -> np.ndarray:
        g = self.grid
        return np.broadcast_to(g.phi_nodes[None, :, None], g.shape)


def _unit_gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _pchip_slopes(eta, y):
    return PchipInterpolator(eta, y)(eta, 1)


def _zero(n):
    return np.zeros(n)


# ---------------------------------------------------------------------------
# operators


def apply_K(problem: MilneProblem, boundary_datum: Datum) -> Field:
    """Attenuated boundary datum K[p] on every grid node."""
    sw = _Sweep(problem, None)
    n = problem.grid.eta_nodes.size
    K, _, _, _, _ = sw.run(_zero(n), _zero(n), False)
    phi0 = sw.entry_angle(sw.grid_phi)
    psi = problem.grid.psi_nodes[None, None, :]
    p = problem.replace(h=boundary_datum).datum(phi0, np.broadcast_to(psi, phi0.shape))
    return Field(sw.expand(K) * p, problem.grid)


def apply_T(problem: MilneProblem, source_field: Field) -> Field:
    """Duhamel term T[S] on every grid node (no boundary contribution)."""
    src = source_field.values if isinstance(source_field, Field) else problem.grid.sample(source_field).values
    sw = _Sweep(problem, src)
    n = problem.grid.eta_nodes.size
    _, R, _, _, _ = sw.run(_zero(n), _zero(n), False)
    return Field(sw.expand(R), problem.grid)


def _boundary_term(problem: MilneProblem, sw: _Sweep, K, shift: float = 0.0, phi=None):
    phi0 = sw.entry_angle(sw.grid_phi if phi is None else phi)
    psi = np.broadcast_to(problem.grid.psi_nodes[None, None, :], phi0.shape)
    hv = problem.datum(phi0, psi) + shift
    return sw.expand(K) * hv, float(np.max(np.abs(hv), initial=0.0))


def _aitken(x0, x1, x2):
    d1 = x2 - x1
    d2 = x2 - 2.0 * x1 + x0
    den = float(np.dot(d2, d2))
    if den <= 1e-300:
        return x2
    return x2 - (float(np.dot(d2, d1)) / den) * d1


def _solve(problem: MilneProblem, shift: float = 0.0) -> MilneSolution:
    cfg = problem.cfg
    grid = problem.grid
    eta = grid.eta_nodes
    n = eta.size
    src = problem.source_values()
    sw = _Sweep(problem, src)
    rule = sw.aux_rule()
    # kernel rows averaged with the separatrix-aware angular rule
    Ka, R0a, _, MA, MB = sw.run(_zero(n), _zero(n), True, aux=True)
    hKa, h_sup = _boundary_term(problem, sw, Ka, shift, phi=rule.phi)
    const = rule.integrate(hKa + sw.expand(R0a)) / FOUR_PI
    s_sup = 0.0 if src is None else float(np.max(np.abs(src)))

    def sweep(y):
        return const + MA @ y + MB @ _pchip_slopes(eta, y)

    y = np.zeros(n)
    history = []
    recent = []
    it = 0
    while True:
        it += 1
        y_new = sweep(y)
        bound = max(h_sup, float(np.max(np.abs(y))) + s_sup)
        if float(np.max(np.abs(y_new))) > bound * (1.0 + 1e-10) + 1e-13:
            raise AssertionError("maximum principle violated by a source-iteration sweep")
        diff = float(np.max(np.abs(y_new - y)))
        history.append(diff)
        y = y_new
        if diff <= cfg.fixed_point_tol and _settled(history, cfg.fixed_point_tol):
            break
        if it >= cfg.max_iterations:
            raise NonConvergenceError(it, history)
        recent.append(y)
        if len(recent) == 3:
            if it % 5 == 0:
                y = _aitken(*recent)
                recent = []
            else:
                recent = recent[1:]
    m = _pchip_slopes(eta, y)
    K, R, _, _, _ = sw.run(y, m, False)
    hK, _ = _boundary_term(problem, sw, K, shift)
    f = Field(hK + sw.expand(R), grid)
    Ka, Ra, _, _, _ = sw.run(y, m, False, aux=True)
    rule.f = hKa + sw.expand(Ra)
    sol = MilneSolution(
        f=f,
        f_L=float(rule.moment(_sin2)[-1] / NORM_SIN2),
        f_L_tail=tail_average(y, eta),
        iterations=it,
        residual_history=np.asarray(history),
        problem=problem,
        fbar=y,
        flux0=float(-rule.moment(_outgoing_flux_weight)[0] / FOUR_PI),
        rule=rule,
    )
    log.debug("Milne solve: %d sweeps, f_L=%.12g (tail %.12g)", it, sol.f_L, sol.f_L_tail)
    return sol


def _sin2(s, psi):
    return s * s


def _outgoing_flux_weight(s, psi):
    return np.where(s < 0, s, 0.0)


def _settled(history, tol) -> bool:
    """Successive updates shrink fast enough that the remaining error is below tol.

    The update ratio estimates the contraction factor rho, and the distance
    to the fixed point is about diff * rho / (1 - rho).
    """
    if len(history) < 2 or history[-2] == 0.0:
        return True
    rho = min(history[-1] / history[-2], 0.999)
    return history[-1] * rho / (1.0 - rho) <= tol


def solve_inflow(problem: MilneProblem) -> MilneSolution:
    """Fixed point of f = K[h] + T[fbar + S] with the in-flow datum h."""
    return _solve(problem)


def estimate_fL_values(f: Field) -> float:
    s2 = f.grid.sin_phi[:, None] ** 2
    return float(moment(f, s2, -1) / NORM_SIN2)


def estimate_fL(sol: MilneSolution) -> float:
    """f_L = beta(L) / ||sin(phi)||^2 = <sin^2 phi, f>(L) / (4 pi / 3)."""
    return estimate_fL_values(sol.f)


def tail_average(fbar: np.ndarray, eta: np.ndarray, fraction: float = 0.1) -> float:
    """Trapezoid average of fbar over the last ``fraction`` of the slab."""
    L = eta[-1]
    sel = eta >= (1.0 - fraction) * L
    e, v = eta[sel], fbar[sel]
    if e.size < 2:
        return float(v[-1])
    return float(np.trapezoid(v, e) / (e[-1] - e[0]))


def check_compatibility(problem: MilneProblem) -> float:
    """∬_{sin(phi)>0} h sin(phi) cos(phi) + ∫_0^L ∬ exp(-V) S cos(phi), by grid quadrature."""
    g = problem.grid
    s = g.sin_phi
    ph, ps = np.meshgrid(g.phi_nodes, g.psi_nodes, indexing="ij")
    hv = problem.datum(ph, ps)
    ws = np.where(s > 0, s * g.w_phi, 0.0)
    total = float(np.einsum("jk,j,k->", hv, ws, g.w_psi))
    src = problem.source_values()
    if src is not None:
        ev = np.exp(-problem.geometry.potential(g.eta_nodes[:, None], g.psi_nodes[None, :]))
        inner = np.einsum("ijk,ik,j,k->i", src, ev, g.w_phi, g.w_psi)
        total += float(np.dot(g.w_eta, inner))
    return total


def _compatibility_scale(problem: MilneProblem) -> float:
    g = problem.grid
    ph, ps = np.meshgrid(g.phi_nodes, g.psi_nodes, indexing="ij")
    return max(1.0, float(np.max(np.abs(problem.datum(ph, ps)))), abs(problem.p0))


def solve_diffusive(problem: MilneProblem, tol: float = 1e-8) -> MilneSolution:
    """Diffusive boundary f(0) = h + P[f](0) with the normalisation P[f](0) = p0.

    For compatible data the solution coincides with the in-flow solution for
    the datum ``h + p0``.  With the 1/(4 pi) flux prefactor the flux balance
    at eta = 0 requires ``defect(h) + pi p0 - 4 pi p0 = 0``; the usual
    condition is recovered for p0 = 0.

    Raises
    ------
    IncompatibilityError
        Carrying the defect when the condition fails.
    """
    defect = check_compatibility(problem) - 3.0 * math.pi * problem.p0
    if abs(defect) > tol * _compatibility_scale(problem):
        raise IncompatibilityError(defect)
    return _solve(problem, shift=problem.p0)


# ---------------------------------------------------------------------------
# hydrodynamic lift


@dataclass
class HydroLift:
    eta: np.ndarray
    a: np.ndarray
    a0: float
    fn: Callable = field(repr=False)
    rate: Callable = field(repr=False)
    s_q: Callable = field(repr=False)

    def derivative(self, x):
        """a'(x) from the ODE right-hand side."""
        return self.rate(x) * self.fn(x) + 3.0 * self.s_q(x)

    def moment_residual(self, problem: "MilneProblem") -> np.ndarray:
        """-(1/4pi) ∬ (sin(phi) d_eta + F cos(phi) d_phi)(a sin(phi)) cos(phi) + S_Q per eta node.

        The angular integral uses the phase-grid quadrature; the derivatives
        of f2 = a(eta) sin(phi) are exact (a' from the ODE).
        """
        g = problem.grid
        eta = self.eta
        s = g.sin_phi[None, :, None]
        c = g.cos_phi[None, :, None]
        F = problem.geometry.force(eta[:, None], g.psi_nodes[None, :])[:, None, :]
        da = np.asarray(self.derivative(eta))[:, None, None]
        a = self.a[:, None, None]
        integrand = s * da * s + F * c * a * c
        total = np.einsum("ijk,j,k->i", integrand, g.w_phi, g.w_psi)
        return -total / FOUR_PI + np.asarray(self.s_q(eta))


def _bar_of_callable(problem: MilneProblem, S: Callable) -> Callable:
    g = problem.grid
    ph, ps = np.meshgrid(g.phi_nodes, g.psi_nodes, indexing="ij")
    w = np.outer(g.w_phi, g.w_psi) / FOUR_PI

    def s_q(x):
        x = np.asarray(x, dtype=float)
        out = np.array([np.sum(w * np.broadcast_to(S(xi, ph, ps), ph.shape)) for xi in x.ravel()])
        return out.reshape(x.shape) if x.ndim else float(out[0])

    return s_q


def hydro_lift(problem: MilneProblem, s_q: Optional[Callable] = None) -> HydroLift:
    """Coefficient a(eta) of f2 = a(eta) sin(phi) carrying the averaged source.

    a solves  a' = eps (kappa1/(1 - eps kappa1 eta) + kappa2/(1 - eps kappa2 eta)) a + 3 S_Q
    (the angular moment of the transport operator applied to a sin(phi))
    with a(0) chosen so that a(L) = 0.
    """
    if s_q is None:
        if problem.S is None:
            s_q = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
        elif callable(problem.S):
            s_q = _bar_of_callable(problem, problem.S)
        else:
            raise TypeError("hydro_lift needs S_Q as a function of eta")
    k1, k2 = problem.geometry.curvatures
    eps = problem.geometry.epsilon
    L = problem.cfg.slab_length

    def C(x):  # ∫_0^x rate
        x = np.asarray(x, dtype=float)
        return -(np.log1p(-eps * k1 * x) + np.log1p(-eps * k2 * x))

    def rate(x):
        x = np.asarray(x, dtype=float)
        return eps * (k1 / (1.0 - eps * k1 * x) + k2 / (1.0 - eps * k2 * x))

    def integrand(y):
        return float(np.exp(-C(y)) * 3.0 * s_q(y))

    def cumulative(x):
        return integrate.quad(integrand, 0.0, x, epsabs=1e-15, epsrel=1e-13, limit=200)[0]

    a0 = -cumulative(L)

    def fn(x):
        x = np.asarray(x, dtype=float)
        vals = np.array([np.exp(C(xi)) * (a0 + cumulative(xi)) for xi in x.ravel()])
        return vals.reshape(x.shape) if x.ndim else float(vals[0])

    eta = problem.grid.eta_nodes
    # accumulate interval by interval to keep every quad call short
    pieces = [0.0] + [
        integrate.quad(integrand, a, b, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
        for a, b in zip(eta[:-1], eta[1:])
    ]
    acc = np.cumsum(pieces)
    a = np.exp(C(eta)) * (a0 + acc)
    return HydroLift(eta=eta, a=a, a0=a0, fn=fn, rate=rate, s_q=s_q)


# ---------------------------------------------------------------------------
# derivative problems


def _grid_phi_derivative_term(problem: MilneProblem, base: MilneSolution):
    return np.cos(problem.grid.phi_nodes)[None, :, None] * d_phi(base.f)


def solve_tangential(
    problem: MilneProblem,
    base: MilneSolution,
    i: int,
    dS_dtau: Source = None,
    dh_dtau: Datum = 0.0,
) -> MilneSolution:
    """Milne problem for w = d(f - f_L)/d tau_i.

    W = df/dtau_i solves the same Milne problem with in-flow datum dh/dtau_i
    and source  dS/dtau_i - (dF/dtau_i) cos(phi) df/dphi; the returned field
    is w = W - W_L, with W_L from beta(L).  ``f_L_tail`` of the result is the
    independent tail-average estimate of w_L, which should vanish.
    """
    g = problem.grid
    geo = problem.geometry
    dF = geo.force_tau_derivative(g.eta_nodes[:, None], g.psi_nodes[None, :], i)
    src = -dF[:, None, :] * _grid_phi_derivative_term(problem, base)
    if dS_dtau is not None:
        src = src + (dS_dtau.values if isinstance(dS_dtau, Field) else g.sample(dS_dtau).values)
    sub = problem.replace(h=dh_dtau, S=Field(src, g), p0=0.0, boundary_kind="inflow")
    W = _solve(sub)
    w = W.f - W.f_L
    fbar = W.fbar - W.f_L
    rule = dataclasses.replace(W.rule, f=W.rule.f - W.f_L)
    return MilneSolution(
        f=w,
        f_L=float(rule.moment(_sin2)[-1] / NORM_SIN2),
        f_L_tail=tail_average(fbar, g.eta_nodes),
        iterations=W.iterations,
        residual_history=W.residual_history,
        problem=sub,
        fbar=fbar,
        flux0=float(-rule.moment(_outgoing_flux_weight)[0] / FOUR_PI),
        rule=rule,
    )


def solve_psi_derivative(
    problem: MilneProblem,
    base: MilneSolution,
    dS_dpsi: Source = None,
    dh_dpsi: Datum = 0.0,
) -> MilneSolution:
    """w' = df/dpsi solves the transport equation without the fbar term.

    Source: dS/dpsi - (dF/dpsi) cos(phi) df/dphi, in-flow datum dh/dpsi, so
    w' = K[dh/dpsi] + T[source] directly (no iteration).
    """
    g = problem.grid
    geo = problem.geometry
    dF = geo.force_psi_derivative(g.eta_nodes[:, None], g.psi_nodes[None, :])
    src = -dF[:, None, :] * _grid_phi_derivative_term(problem, base)
    if dS_dpsi is not None:
        src = src + (dS_dpsi.values if isinstance(dS_dpsi, Field) else g.sample(dS_dpsi).values)
    sub = problem.replace(h=dh_dpsi, S=Field(src, g), p0=0.0, boundary_kind="inflow")
    sw = _Sweep(sub, src)
    n = g.eta_nodes.size
    K, R, _, _, _ = sw.run(_zero(n), _zero(n), False)
    hK, _ = _boundary_term(sub, sw, K)
    f = Field(hK + sw.expand(R), g)
    fbar = bar(f)
    return MilneSolution(
        f=f,
        f_L=estimate_fL_values(f),
        f_L_tail=tail_average(fbar, g.eta_nodes),
        iterations=1,
        residual_history=np.zeros(1),
        problem=sub,
        fbar=fbar,
        flux0=p_flux(f, 0),
    )


def solve(problem: MilneProblem) -> MilneSolution:
    """Dispatch on ``problem.boundary_kind``."""
    if problem.boundary_kind == "diffusive":
        return solve_diffusive(problem)
    return solve_inflow(problem)
