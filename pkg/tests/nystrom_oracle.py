"""Deterministic integral-equation solve of the unit-ball transport problem, g = cos(theta).

Test fixture only.  With g = z the solution lives in the l = 1 sector:
ubar(x) = A(r) cos(theta) and the Lambertian re-emission is B z on the
sphere.  Writing the mild formulation as integrals over the ball and its
surface gives, for x = r e_z,

    A(r) = ∫_0^1 r'^2 K(r, r') A(r') dr' + (B + eps) S(r)
    B    = ∫_0^1 r'^2 (4 / eps) S(r') A(r') dr' + (B + eps) C

with the l = 1 kernel K in closed form through E1 and S, C by quadrature.
A is piecewise linear on a radial mesh graded towards the sphere
(collocation at the nodes).
"""

import numpy as np
from scipy import integrate, special


def _volume_kernel(r, rp, eps):
    """r'^2 K(r, r'): l = 1 projection of exp(-|x-y|/eps) / (4 pi eps |x-y|^2)."""
    a = np.abs(r - rp)
    b = r + rp
    e1 = special.exp1(np.maximum(a, 1e-300) / eps) - special.exp1(b / eps)
    lin = eps * (np.exp(-a / eps) * (a + eps) - np.exp(-b / eps) * (b + eps))
    return ((r * r + rp * rp) * e1 - lin) / (4.0 * eps * r * r)


def _surface(r, eps):
    """S(r) = (1/4pi) ∫_{S^2} exp(-d/eps) mu (1 - r mu) / d^3 dS, the limit from inside at r = 1.

    Integrated in s = ln d, which keeps the near-boundary peak at d = 1 - r smooth.
    """
    if r == 0.0:
        return 0.0
    r_in = min(r, 1.0 - 1e-12)

    def f(s):
        d = np.exp(s)
        mu = (1.0 + r_in * r_in - d * d) / (2.0 * r_in)
        return np.exp(-d / eps) * mu * 0.5 * (1.0 - r_in * r_in + d * d) / d

    val, _ = integrate.quad(f, np.log(1.0 - r_in), np.log(1.0 + r_in), epsabs=1e-13,
                            epsrel=1e-12, limit=400)
    return val / (2.0 * r_in)


def _sphere_to_sphere(eps):
    f = lambda mu: np.exp(-np.sqrt(2.0 - 2.0 * mu) / eps) * mu  # noqa: E731
    return 0.5 * integrate.quad(f, -1.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)[0]


def assemble(eps, n=200, order=12):
    """Collocation matrices on a mesh graded towards r = 1: (r, W, vb, S)."""
    x = np.linspace(0.0, 1.0, n + 1)
    r = 1.0 - (1.0 - x) ** 2
    gx, gw = np.polynomial.legendre.leggauss(order)
    N = n + 1
    W = np.zeros((N, N))
    vb = np.zeros(N)
    S = np.array([_surface(ri, eps) for ri in r])
    for e in range(n):
        lo, hi = r[e], r[e + 1]
        h = hi - lo
        xq = lo + 0.5 * h * (gx + 1.0)
        wq = 0.5 * h * gw
        phi0 = (hi - xq) / h
        phi1 = (xq - lo) / h
        sq = np.array([_surface(v, eps) for v in xq])
        kb = xq * xq * 4.0 / eps * sq
        vb[e] += np.dot(wq, kb * phi0)
        vb[e + 1] += np.dot(wq, kb * phi1)
        for i in range(1, N):
            if i == e or i == e + 1:
                for j, hat in ((e, lambda v: (hi - v) / h), (e + 1, lambda v: (v - lo) / h)):
                    W[i, j] += integrate.quad(
                        lambda v: _volume_kernel(r[i], v, eps) * hat(v), lo, hi, limit=200,
                        epsabs=1e-13, epsrel=1e-11,
                    )[0]
            else:
                kv = _volume_kernel(r[i], xq, eps)
                W[i, e] += np.dot(wq, kv * phi0)
                W[i, e + 1] += np.dot(wq, kv * phi1)
    return r, W, vb, S


def solve_ball(eps, n=200, order=12):
    """Return (r_nodes, A, B) for the l = 1 problem with g = cos(theta)."""
    r, W, vb, S = assemble(eps, n, order)
    N = n + 1
    C = _sphere_to_sphere(eps)
    # unknowns: A_1..A_n (A_0 = 0) and B
    M = np.zeros((N, N))
    rhs = np.zeros(N)
    M[: N - 1, : N - 1] = np.eye(N - 1) - W[1:, 1:]
    M[: N - 1, N - 1] = -S[1:]
    rhs[: N - 1] = eps * S[1:]
    M[N - 1, : N - 1] = -vb[1:]
    M[N - 1, N - 1] = 1.0 - C
    rhs[N - 1] = eps * C
    sol = np.linalg.solve(M, rhs)
    A = np.concatenate([[0.0], sol[: N - 1]])
    return r, A, sol[N - 1]


def ubar(eps, x, n=200):
    r, A, _ = solve_ball(eps, n)
    x = np.asarray(x, dtype=float)
    rx = float(np.linalg.norm(x))
    return float(np.interp(rx, r, A) * (x[2] / rx if rx > 0 else 0.0))
