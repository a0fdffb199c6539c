"""Diffusive-limit harness on the unit ball.

The transport problem

    eps w . grad u + u - ubar = 0           in |x| < 1,
    u = P[u] + eps g                        on incoming directions (w . n < 0),

with Lambertian re-emission ``P[u](x) = (1/pi) ∫_{w.n>0} (w.n) u(x, w) dw``
is solved by a backward Monte Carlo estimator of its mild formulation: from
``(x, w)`` the characteristic ``x - eps t w`` is followed with Exp(1)
collision times; a collision redraws ``w`` uniformly (the ``ubar`` term), a
boundary hit scores ``eps g`` and redraws ``w`` from the cosine law.  The
leading interior profile ``U0`` is a harmonic polynomial with Neumann data
``c ∬_{sin(phi)>0} g sin(phi) cos(phi)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit, prange

from .phase_grid import PhaseGrid
from .solver import IncompatibilityError

log = logging.getLogger(__name__)

STATED_NEUMANN_CONSTANT = 1.0 / math.pi**2
FLUX_NEUMANN_CONSTANT = 3.0 / (4.0 * math.pi)
G_MODES = {"zero": 0, "cos_theta": 1, "p2": 2, "one": 3}
_DEGREE = {"zero": 0, "cos_theta": 1, "p2": 2, "one": 0}
RELATIVE_SE_LIMIT = 0.5
COMPAT_TOL = 1e-10


def _default_tallies():
    pts = []
    for r in (0.25, 0.5):
        for th, ph in ((math.pi / 6, 0.0), (math.pi / 3, math.pi / 2),
                       (2 * math.pi / 3, math.pi), (5 * math.pi / 6, 1.5 * math.pi)):
            pts.append(((r * math.sin(th) * math.cos(ph), r * math.sin(th) * math.sin(ph),
                         r * math.cos(th)), None))
    return tuple(pts)


def g_value(mode: str, y) -> np.ndarray:
    """Boundary datum g at points y on the unit sphere (direction independent)."""
    z = np.asarray(y, dtype=float)[..., 2]
    if mode == "zero":
        return np.zeros_like(z)
    if mode == "cos_theta":
        return z
    if mode == "p2":
        return 0.5 * (3.0 * z * z - 1.0)
    if mode == "one":
        return np.ones_like(z)
    raise ValueError(f"unsupported boundary family {mode!r}")


def boundary_compatibility(mode: str, n: int = 64) -> float:
    """∬_{∂Ω} ∬_{w.n<0} g (w.n) dw dS = -pi ∫_{S^2} g dS, by Gauss quadrature."""
    mu, wmu = np.polynomial.legendre.leggauss(n)
    pts = np.zeros((n, 3))
    pts[:, 2] = mu
    return float(-math.pi * 2.0 * math.pi * np.dot(wmu, g_value(mode, pts)))


@dataclass(frozen=True)
class BallProblem:
    """Unit-ball transport problem with boundary family ``g_mode``.

    ``tally_points`` holds ``(x, directions)`` pairs; ``directions=None``
    tallies ubar(x), otherwise the mean of u(x, w) over the given unit
    vectors.  ``t_max`` (mean free times) defaults to 8 / eps^2.
    """

    epsilon: float
    g_mode: str = "cos_theta"
    n_samples: int = 10**6
    seed: int = 0
    tally_points: tuple = field(default_factory=_default_tallies)
    t_max: Optional[float] = None
    scatter: bool = True
    reflect: bool = True
    neumann_constant: float = STATED_NEUMANN_CONSTANT

    def __post_init__(self):
        if self.g_mode not in G_MODES:
            raise ValueError(f"unsupported boundary family {self.g_mode!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        defect = boundary_compatibility(self.g_mode)
        if abs(defect) > COMPAT_TOL:
            raise IncompatibilityError(defect)
        r_max = self.interior_radius
        for x, _ in self.tally_points:
            if np.linalg.norm(x) > r_max + 1e-12:
                raise ValueError(f"tally point {x} outside |x| <= {r_max:.3g}")

    @property
    def interior_radius(self) -> float:
        """Largest admissible tally radius: 1 - 5 eps, but never below 0.5."""
        return max(1.0 - 5.0 * self.epsilon, 0.5)

    @property
    def horizon(self) -> float:
        return 8.0 / self.epsilon**2 if self.t_max is None else float(self.t_max)

    def replace(self, **changes) -> "BallProblem":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# analytic interior profile


@dataclass(frozen=True)
class InteriorProfile:
    """U0 = coef * r^l Y_l for the zonal families; value and gradient."""

    mode: str
    coef: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.mode in ("zero", "one"):
            return np.zeros(x.shape[:-1])
        if self.mode == "cos_theta":
            return self.coef * x[..., 2]
        r2 = np.sum(x * x, axis=-1)
        return self.coef * 0.5 * (3.0 * x[..., 2] ** 2 - r2)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if self.mode == "cos_theta":
            out[..., 2] = self.coef
        elif self.mode == "p2":
            out[..., 0] = -self.coef * x[..., 0]
            out[..., 1] = -self.coef * x[..., 1]
            out[..., 2] = 2.0 * self.coef * x[..., 2]
        return out


def interior_u0(problem: BallProblem, constant: Optional[float] = None) -> InteriorProfile:
    """Harmonic, mean-zero U0 with dU0/dr = c ∬_{sin(phi)>0} g sin(phi) cos(phi) on r = 1.

    For direction-independent g the angular integral is pi g, so a degree-l
    zonal datum gives U0 = c pi r^l Y_l / l.  ``constant`` defaults to the
    problem's ``neumann_constant``.
    """
    c = problem.neumann_constant if constant is None else float(constant)
    mode = problem.g_mode
    if mode not in G_MODES:
        raise ValueError(f"unsupported boundary family {mode!r}")
    l = _DEGREE[mode]
    coef = 0.0 if l == 0 else c * math.pi / l
    return InteriorProfile(mode, coef)


# ---------------------------------------------------------------------------
# geometry of free flights


def hitting_time(x, w, eps: float):
    """t_b = inf{t > 0 : x - eps t w leaves the ball} and the footpoint.

    Raises
    ------
    ValueError
        For a boundary point with a grazing or outward-leaving direction.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    b = float(np.dot(x, w))
    c = float(np.dot(x, x)) - 1.0
    if c > 1e-12:
        raise ValueError("start point outside the ball")
    if c >= -1e-12:
        if b <= 1e-12:
            raise ValueError("grazing or exiting direction at the boundary")
        d = 2.0 * b
    else:
        root = math.sqrt(b * b - c)
        d = b + root if b >= 0 else -c / (root - b)
    tb = d / eps
    return tb, x - d * w


def _frame(n):
    n = np.asarray(n, dtype=float)
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def cosine_direction(n, u1: float, u2: float) -> np.ndarray:
    """Direction with density (w.n)/pi on the hemisphere w.n > 0."""
    ct = math.sqrt(u1)
    st = math.sqrt(max(0.0, 1.0 - u1))
    t1, t2 = _frame(n)
    ph = 2.0 * math.pi * u2
    return ct * np.asarray(n) + st * (math.cos(ph) * t1 + math.sin(ph) * t2)


@dataclass
class CycleRecord:
    times: np.ndarray
    footpoints: np.ndarray
    directions: np.ndarray
    reason: str


def sample_cycle(problem: BallProblem, start, rng: np.random.Generator, k_max: int = 1000,
                 t_stop: Optional[float] = None) -> CycleRecord:
    """Back-time cycle: free flights between boundary hits with cosine-law redraws.

    ``reason`` is "boundary-source" when the cycle passes ``t_stop`` (default
    the problem horizon) and "truncation" when k_max reflections are used up.
    """
    eps = problem.epsilon
    stop = problem.horizon if t_stop is None else float(t_stop)
    x, w = (np.asarray(v, dtype=float) for v in start)
    times, feet, dirs = [0.0], [], [w]
    reason = "truncation"
    for _ in range(k_max):
        tb, y = hitting_time(x, w, eps)
        y = y / np.linalg.norm(y)
        times.append(times[-1] + tb)
        feet.append(y)
        if times[-1] >= stop:
            reason = "boundary-source"
            break
        w = cosine_direction(y, *rng.random(2))
        dirs.append(w)
        x = y
    return CycleRecord(np.array(times), np.array(feet), np.array(dirs), reason)


def escape_fractions(problem: BallProblem, t0: float, ks: Sequence[int], n: int = 2000,
                     seed: int = 0) -> np.ndarray:
    """Fraction of cycles whose k-th boundary time is still below t0."""
    rng = np.random.default_rng(seed)
    kmax = max(ks) + 1
    out = np.zeros(len(ks))
    for _ in range(n):
        v = rng.normal(size=3)
        rec = sample_cycle(problem, (np.zeros(3), v / np.linalg.norm(v)), rng, k_max=kmax,
                           t_stop=np.inf)
        for i, k in enumerate(ks):
            out[i] += rec.times[k] < t0
    return out / n


# ---------------------------------------------------------------------------
# counter-based random numbers (splitmix64)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _stream_key(seed, stream, index):
    return _mix64(_mix64(_mix64(np.uint64(seed)) ^ np.uint64(stream)) + np.uint64(index) * _GOLDEN)


@njit(cache=True)
def _uniform(state):
    """Advance ``state[0]`` and return a double in (0, 1)."""
    state[0] += _GOLDEN
    z = _mix64(state[0])
    return (float(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _iso_dir(state, out):
    mu = 2.0 * _uniform(state) - 1.0
    ph = 2.0 * np.pi * _uniform(state)
    s = np.sqrt(max(0.0, 1.0 - mu * mu))
    out[0] = s * np.cos(ph)
    out[1] = s * np.sin(ph)
    out[2] = mu


@njit(cache=True)
def _cos_dir(state, n, out):
    u1 = _uniform(state)
    ph = 2.0 * np.pi * _uniform(state)
    ct = np.sqrt(u1)
    st = np.sqrt(max(0.0, 1.0 - u1))
    if abs(n[0]) < 0.9:
        a0, a1, a2 = 1.0, 0.0, 0.0
    else:
        a0, a1, a2 = 0.0, 1.0, 0.0
    t0 = n[1] * a2 - n[2] * a1
    t1 = n[2] * a0 - n[0] * a2
    t2 = n[0] * a1 - n[1] * a0
    tn = np.sqrt(t0 * t0 + t1 * t1 + t2 * t2)
    t0 /= tn
    t1 /= tn
    t2 /= tn
    b0 = n[1] * t2 - n[2] * t1
    b1 = n[2] * t0 - n[0] * t2
    b2 = n[0] * t1 - n[1] * t0
    cp = np.cos(ph)
    sp = np.sin(ph)
    out[0] = ct * n[0] + st * (cp * t0 + sp * b0)
    out[1] = ct * n[1] + st * (cp * t1 + sp * b1)
    out[2] = ct * n[2] + st * (cp * t2 + sp * b2)


@njit(cache=True)
def _g_at(mode, y):
    if mode == 1:
        return y[2]
    if mode == 2:
        return 0.5 * (3.0 * y[2] * y[2] - 1.0)
    if mode == 3:
        return 1.0
    return 0.0


@njit(cache=True)
def _history(x0, w0, use_w0, eps, t_max, scatter, reflect, mode, seed, stream, index):
    state = np.empty(1, dtype=np.uint64)
    state[0] = _stream_key(seed, stream, index)
    x = x0.copy()
    w = np.empty(3)
    if use_w0:
        w[:] = w0
    else:
        _iso_dir(state, w)
    y = np.empty(3)
    T = 0.0
    score = 0.0
    on_boundary = False
    while True:
        b = x[0] * w[0] + x[1] * w[1] + x[2] * w[2]
        if on_boundary:
            d = 2.0 * b
        else:
            c = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] - 1.0
            root = np.sqrt(b * b - c)
            d = b + root if b >= 0.0 else -c / (root - b)
        tb = d / eps
        t = -np.log(_uniform(state))
        if t < tb:
            if not scatter or T + t > t_max:
                break
            T += t
            for i in range(3):
                x[i] -= eps * t * w[i]
            _iso_dir(state, w)
            on_boundary = False
            continue
        if T + tb > t_max:
            break
        T += tb
        for i in range(3):
            y[i] = x[i] - d * w[i]
        ny = np.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
        for i in range(3):
            y[i] /= ny
        score += eps * _g_at(mode, y)
        if not reflect:
            break
        _cos_dir(state, y, w)
        x[:] = y
        on_boundary = True
    return score


@njit(parallel=True, cache=True)
def _run_tally(x0, dirs, eps, t_max, scatter, reflect, mode, seed, stream, n):
    scores = np.empty(n)
    nd = dirs.shape[0]
    use_w0 = nd > 0
    for h in prange(n):
        if use_w0:
            w0 = dirs[h % nd]
        else:
            w0 = np.zeros(3)
        scores[h] = _history(x0, w0, use_w0, eps, t_max, scatter, reflect, mode, seed, stream, h)
    return scores


@dataclass
class Tally:
    x: tuple
    estimate: float
    std_error: float
    flagged: bool


def _pairwise_sum(a: np.ndarray) -> float:
    while a.size > 1:
        if a.size % 2:
            a = np.append(a, 0.0)
        a = a[0::2] + a[1::2]
    return float(a[0]) if a.size else 0.0


def mc_solve(problem: BallProblem) -> list[Tally]:
    """Monte Carlo estimates of ubar (or direction-set means of u) at the tally points.

    Deterministic for a given seed: history h of tally i uses the random
    stream keyed by (seed, i, h), and sums are reduced pairwise in a fixed
    order.  A tally is flagged when its relative standard error exceeds 50%.
    """
    out = []
    mode = G_MODES[problem.g_mode]
    n = int(problem.n_samples)
    for i, (x, dirs) in enumerate(problem.tally_points):
        d = np.zeros((0, 3)) if dirs is None else np.atleast_2d(np.asarray(dirs, dtype=float))
        scores = _run_tally(np.asarray(x, dtype=float), d, problem.epsilon, problem.horizon,
                            problem.scatter, problem.reflect, mode, problem.seed, i, n)
        mean = _pairwise_sum(scores) / n
        dev = scores - mean
        var = _pairwise_sum(dev * dev) / max(n - 1, 1)
        se = math.sqrt(var / n)
        flagged = abs(mean) > 0 and se > RELATIVE_SE_LIMIT * abs(mean)
        out.append(Tally(tuple(float(v) for v in x), mean, se, bool(flagged)))
        log.debug("tally %d at %s: %.6g +- %.2g", i, x, mean, se)
    return out


@dataclass
class StudyRow:
    eps: float
    max_error: float
    max_error_se: float
    tallies: list


@dataclass
class ConvergenceTable:
    rows: list
    slope: float
    monotone: bool


def convergence_study(eps_list: Sequence[float], problem_template: BallProblem,
                      u0: Optional[InteriorProfile] = None) -> ConvergenceTable:
    """sup over tallies of |u^eps - U0| for decreasing eps, with the log-log slope.

    ``monotone`` allows each step to increase by at most one standard error.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("need at least three decreasing eps values")
    u0 = interior_u0(problem_template) if u0 is None else u0
    rows = []
    for eps in eps_list:
        pb = problem_template.replace(epsilon=eps)
        tallies = mc_solve(pb)
        errs = [abs(t.estimate - float(u0(np.asarray(t.x)))) for t in tallies]
        k = int(np.argmax(errs))
        rows.append(StudyRow(eps, errs[k], tallies[k].std_error, tallies))
    errs = np.array([r.max_error for r in rows])
    ses = np.array([r.max_error_se for r in rows])
    monotone = bool(all(errs[i + 1] <= errs[i] + max(ses[i], ses[i + 1]) for i in range(len(rows) - 1)))
    if np.all(errs > 0):
        slope = float(np.polyfit(np.log(eps_list), np.log(errs), 1)[0])
    else:
        slope = math.nan
    return ConvergenceTable(rows, slope, monotone)


# ---------------------------------------------------------------------------
# boundary-layer datum


@dataclass
class LayerDatum:
    h: Callable
    defect: float
    normal_derivative: float


def boundary_layer_datum(problem: BallProblem, u0: InteriorProfile, x0=(0.0, 0.0, 1.0),
                         tol: float = 1e-8, n_phi: int = 32, n_psi: int = 16) -> LayerDatum:
    """Milne in-flow datum g1 = w.grad U0 - P[w.grad U0] + g at the footpoint x0.

    In the local frame w = sin(phi) n + cos(phi) sin(psi) t1 + cos(phi) cos(psi) t2
    with n the inward normal.  P is the Lambertian flux average, so
    P[w.grad U0] = -(2/3) dU0/dn.

    Raises
    ------
    IncompatibilityError
        If ∬_{sin(phi)>0} g1 sin(phi) cos(phi) is not zero (U0 and g inconsistent).
    """
    x0 = np.asarray(x0, dtype=float)
    x0 = x0 / np.linalg.norm(x0)
    n_in = -x0
    t1, t2 = _frame(n_in)
    grad = u0.gradient(x0)
    dn, d1, d2 = float(grad @ n_in), float(grad @ t1), float(grad @ t2)
    gval = float(g_value(problem.g_mode, x0))
    p_term = -2.0 / 3.0 * dn

    def h(phi, psi):
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        w_grad = np.sin(phi) * dn + np.cos(phi) * (np.sin(psi) * d1 + np.cos(psi) * d2)
        return w_grad - p_term + gval

    grid = PhaseGrid.build(1.0, 4, n_phi, n_psi)
    ph, ps = np.meshgrid(grid.phi_nodes, grid.psi_nodes, indexing="ij")
    ws = np.where(grid.sin_phi > 0, grid.sin_phi * grid.w_phi, 0.0)
    defect = float(np.einsum("jk,j,k->", h(ph, ps), ws, grid.w_psi))
    if abs(defect) > tol:
        raise IncompatibilityError(defect)
    return LayerDatum(h, defect, dn)
