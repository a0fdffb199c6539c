"""Closed-form geometry of the curvature-corrected Milne problem.

Everything here is a pure function of its inputs.  Curvature radii are
handled through their reciprocals internally so that the flat-boundary
(classical Milne) preset with infinite radii needs no special casing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Tau = Sequence[float]

# Exponents in (0, 2/5) are what the decay/regularity results need; a wider
# range is allowed on request for experiments.
N_EXPONENT_MAX = 0.4
N_EXPONENT_MAX_WIDE = 2.0 / 3.0


class GeometryError(ValueError):
    """Raised when a depth leaves the region where R_i - eps*eta > 0."""


def _zero_grad(tau: Tau) -> tuple[float, float]:
    return (0.0, 0.0)


@dataclass(frozen=True)
class CurvatureProfile:
    """Principal curvature radii of the boundary as functions of tau.

    ``r1``/``r2`` map surface coordinates ``tau = (tau1, tau2)`` to a positive
    radius (``math.inf`` for a flat direction).  ``dr1_dtau``/``dr2_dtau``
    return the two partial derivatives with respect to ``tau1`` and ``tau2``.
    """

    r1: Callable[[Tau], float]
    r2: Callable[[Tau], float]
    dr1_dtau: Callable[[Tau], tuple[float, float]] = _zero_grad
    dr2_dtau: Callable[[Tau], tuple[float, float]] = _zero_grad
    r_min: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @classmethod
    def constant(cls, r1: float, r2: float | None = None) -> "CurvatureProfile":
        r2 = r1 if r2 is None else r2
        if not (r1 > 0 and r2 > 0):
            raise ValueError("curvature radii must be positive")
        return cls(
            r1=lambda tau: r1,
            r2=lambda tau: r2,
            r_min=min(r1, r2),
            name="constant",
            params={"r1": r1, "r2": r2},
        )

    @classmethod
    def classical(cls) -> "CurvatureProfile":
        """Flat boundary: both radii infinite, so the force vanishes."""
        return cls(
            r1=lambda tau: math.inf,
            r2=lambda tau: math.inf,
            r_min=math.inf,
            name="classical",
            params={},
        )

    @classmethod
    def modulated(
        cls, r1: float = 2.0, r2: float = 1.0, amp1: float = 0.2, amp2: float = 0.1
    ) -> "CurvatureProfile":
        """tau-dependent radii R_i(tau) = r_i * (1 + amp_i sin(tau1) cos(tau2)).

        Used to exercise the tangential-derivative equations; at ``tau = 0``
        the radii equal ``r1``, ``r2`` and their ``tau1`` derivatives are
        ``r_i * amp_i``.
        """
        if not (0 <= amp1 < 1 and 0 <= amp2 < 1):
            raise ValueError("modulation amplitudes must lie in [0, 1)")

        def radius(r, a):
            return lambda tau: r * (1.0 + a * math.sin(tau[0]) * math.cos(tau[1]))

        def grad(r, a):
            return lambda tau: (
                r * a * math.cos(tau[0]) * math.cos(tau[1]),
                -r * a * math.sin(tau[0]) * math.sin(tau[1]),
            )

        return cls(
            r1=radius(r1, amp1),
            r2=radius(r2, amp2),
            dr1_dtau=grad(r1, amp1),
            dr2_dtau=grad(r2, amp2),
            r_min=min(r1 * (1 - amp1), r2 * (1 - amp2)),
            name="modulated",
            params={"r1": r1, "r2": r2, "amp1": amp1, "amp2": amp2},
        )

    def curvatures(self, tau: Tau) -> tuple[float, float]:
        """Reciprocal radii (kappa1, kappa2); zero for flat directions."""
        r1, r2 = self.r1(tau), self.r2(tau)
        if not (r1 > 0 and r2 > 0):
            raise GeometryError(f"non-positive curvature radius at tau={tuple(tau)}")
        return 1.0 / r1, 1.0 / r2


@dataclass(frozen=True)
class MilneConfig:
    epsilon: float
    n_exponent: float = 0.25
    fixed_point_tol: float = 1e-9
    max_iterations: int = 5000
    decay_rate_k0: float = 0.1
    allow_wide_exponent: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        upper = N_EXPONENT_MAX_WIDE if self.allow_wide_exponent else N_EXPONENT_MAX
        if not 0.0 < self.n_exponent < upper:
            raise ValueError(f"n_exponent must lie in (0, {upper:.4g}), got {self.n_exponent}")
        if self.fixed_point_tol <= 0 or self.max_iterations < 1:
            raise ValueError("tolerance and iteration cap must be positive")

    @property
    def slab_length(self) -> float:
        return self.epsilon ** (-self.n_exponent)

    def check_profile(self, prof: CurvatureProfile) -> None:
        """The slab must stay inside the region where R_i - eps*eta > 0."""
        if not self.epsilon * self.slab_length < prof.r_min:
            raise GeometryError(
                f"eps*L = {self.epsilon * self.slab_length:.4g} is not below "
                f"r_min = {prof.r_min:.4g}"
            )


def _depth_factors(cfg: MilneConfig, prof: CurvatureProfile, tau: Tau, eta):
    """Return (kappa1, kappa2, 1 - eps*eta*kappa1, 1 - eps*eta*kappa2)."""
    k1, k2 = prof.curvatures(tau)
    eta = np.asarray(eta, dtype=float)
    q1 = 1.0 - cfg.epsilon * eta * k1
    q2 = 1.0 - cfg.epsilon * eta * k2
    if np.any(q1 <= 0) or np.any(q2 <= 0):
        raise GeometryError("eps*eta reaches a curvature radius")
    return k1, k2, q1, q2


def force(cfg: MilneConfig, prof: CurvatureProfile, tau: Tau, eta, psi):
    """F = -eps (sin^2 psi / (R1 - eps eta) + cos^2 psi / (R2 - eps eta))."""
    k1, k2, q1, q2 = _depth_factors(cfg, prof, tau, eta)
    s2 = np.sin(psi) ** 2
    return -cfg.epsilon * (s2 * k1 / q1 + (1.0 - s2) * k2 / q2)


def force_split(cfg: MilneConfig, prof: CurvatureProfile, tau: Tau, eta):
    """Split F = F_tilde + G cos^2 psi into its 2D part and the source part."""
    k1, k2, q1, q2 = _depth_factors(cfg, prof, tau, eta)
    eps = cfg.epsilon
    f_tilde = -eps * k1 / q1
    # -eps (R1 - R2)/((R1 - eps eta)(R2 - eps eta)) written with curvatures
    g_source = -eps * (k2 - k1) / (q1 * q2)
    return f_tilde, g_source


def potential(cfg: MilneConfig, prof: CurvatureProfile, tau: Tau, eta, psi):
    """V with V(0, psi) = 0 and dV/deta = -F."""
    k1, k2, q1, q2 = _depth_factors(cfg, prof, tau, eta)
    s2 = np.sin(psi) ** 2
    eta = np.asarray(eta, dtype=float)
    eps = cfg.epsilon
    return -(s2 * np.log1p(-eps * eta * k1) + (1.0 - s2) * np.log1p(-eps * eta * k2))


def potential_increment(cfg: MilneConfig, prof: CurvatureProfile, tau: Tau, eta_a, eta_b, psi):
    """V(eta_b) - V(eta_a) without cancellation when the depths are close."""
    d = np.asarray(eta_b, dtype=float) - np.asarray(eta_a, dtype=float)
    return potential_step(cfg, prof, tau, eta_a, d, psi)


def potential_step(cfg: MilneConfig, prof: CurvatureProfile, tau: Tau, eta_a, d, psi):
    """V(eta_a + d) - V(eta_a) with the step ``d`` given explicitly."""
    k1, k2, qa1, qa2 = _depth_factors(cfg, prof, tau, eta_a)
    eps = cfg.epsilon
    d = np.asarray(d, dtype=float)
    s2 = np.sin(psi) ** 2
    # a direction with zero weight must not contribute even past its own radius
    with np.errstate(invalid="ignore", divide="ignore"):
        t1 = np.where(s2 > 0, s2 * np.log1p(-eps * k1 * d / qa1), 0.0)
        t2 = np.where(s2 < 1, (1.0 - s2) * np.log1p(-eps * k2 * d / qa2), 0.0)
    return -(t1 + t2)


def exp_neg_potential(cfg: MilneConfig, prof: CurvatureProfile, tau: Tau, eta, psi):
    return np.exp(-potential(cfg, prof, tau, eta, psi))


def weight_zeta(cfg: MilneConfig, prof: CurvatureProfile, tau: Tau, eta, phi, psi):
    """Kinetic weight sqrt(1 - (e^{-V} cos phi)^2); vanishes on the grazing set."""
    e = exp_neg_potential(cfg, prof, tau, eta, psi) * np.cos(phi)
    return np.sqrt(np.clip((1.0 - e) * (1.0 + e), 0.0, None))


def _bump_glue(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def cutoff_upsilon0(mu, prof: CurvatureProfile):
    """Smooth cut-off: 1 on [0, R_min/4], 0 on [R_min/2, inf)."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("depth must be non-negative")
    if not math.isfinite(prof.r_min):
        return np.ones_like(mu)
    a, b = 0.25 * prof.r_min, 0.5 * prof.r_min
    x = (mu - a) / (b - a)
    up, down = _bump_glue(1.0 - x), _bump_glue(x)
    out = up / (up + down)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LocalGeometry:
    """A (config, profile, tau) triple with the geometry bound to it."""

    cfg: MilneConfig
    prof: CurvatureProfile
    tau: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        self.cfg.check_profile(self.prof)

    @property
    def epsilon(self) -> float:
        return self.cfg.epsilon

    @property
    def slab_length(self) -> float:
        return self.cfg.slab_length

    @property
    def curvatures(self) -> tuple[float, float]:
        return self.prof.curvatures(self.tau)

    @property
    def is_flat(self) -> bool:
        return self.curvatures == (0.0, 0.0)

    def force(self, eta, psi):
        return force(self.cfg, self.prof, self.tau, eta, psi)

    def force_split(self, eta):
        return force_split(self.cfg, self.prof, self.tau, eta)

    def potential(self, eta, psi):
        return potential(self.cfg, self.prof, self.tau, eta, psi)

    def potential_increment(self, eta_a, eta_b, psi):
        return potential_increment(self.cfg, self.prof, self.tau, eta_a, eta_b, psi)

    def potential_step(self, eta_a, d, psi):
        return potential_step(self.cfg, self.prof, self.tau, eta_a, d, psi)

    def exp_neg_potential(self, eta, psi):
        return exp_neg_potential(self.cfg, self.prof, self.tau, eta, psi)

    def zeta(self, eta, phi, psi):
        return weight_zeta(self.cfg, self.prof, self.tau, eta, phi, psi)

    def force_tau_derivative(self, eta, psi, i: int):
        """d F / d tau_i at fixed (eta, psi)."""
        r1, r2 = self.prof.r1(self.tau), self.prof.r2(self.tau)
        d1 = self.prof.dr1_dtau(self.tau)[i]
        d2 = self.prof.dr2_dtau(self.tau)[i]
        eps = self.epsilon
        eta = np.asarray(eta, dtype=float)
        s2 = np.sin(psi) ** 2
        t1 = 0.0 if d1 == 0 else d1 * s2 / (r1 - eps * eta) ** 2
        t2 = 0.0 if d2 == 0 else d2 * (1.0 - s2) / (r2 - eps * eta) ** 2
        return np.broadcast_to(eps * (t1 + t2), np.broadcast(eta, psi).shape).astype(float)

    def force_psi_derivative(self, eta, psi):
        """d F / d psi at fixed eta."""
        k1, k2, q1, q2 = _depth_factors(self.cfg, self.prof, self.tau, eta)
        return -self.epsilon * np.sin(2 * psi) * (k1 / q1 - k2 / q2)

    def at(self, tau) -> "LocalGeometry":
        return LocalGeometry(self.cfg, self.prof, tuple(tau))
