"""Compiled long-characteristic kernels for the Milne solver.

For every grid node the backward characteristic is followed to the in-flow
boundary (possibly through a specular reflection at eta = L or a turning
point), and the mild formulation

    f = K[h] + T[fbar + S]

is evaluated by composite Gauss quadrature along it.  ``fbar`` is the
piecewise cubic Hermite interpolant of its nodal values ``y`` and slopes
``m``; the same loop can also return the angular averages of the kernel rows,
which turns source iteration into an iteration on ``y`` alone.
"""

import numba
import numpy as np
from numba import njit, prange

# the system TBB may be too old to load; prefer OpenMP
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

INF = np.inf


@njit(cache=True)
def dv_step(k1, k2, a1, eps, x, d):
    """V(x + d) - V(x) for the potential with weights (a1, 1 - a1)."""
    a2 = 1.0 - a1
    r = 0.0
    if a1 > 0.0 and k1 > 0.0:
        z = -eps * k1 * d / (1.0 - eps * k1 * x)
        if z <= -1.0:  # at (or, by rounding, past) the radius of curvature
            return INF
        r -= a1 * np.log1p(z)
    if a2 > 0.0 and k2 > 0.0:
        z = -eps * k2 * d / (1.0 - eps * k2 * x)
        if z <= -1.0:
            return INF
        r -= a2 * np.log1p(z)
    return r


@njit(cache=True)
def is_flat(k1, k2, a1):
    return not ((a1 > 0.0 and k1 > 0.0) or (a1 < 1.0 and k2 > 0.0))


@njit(cache=True)
def turning_depth(k1, k2, a1, eps, eta, s):
    """Depth t >= eta where exp(-V(t)) = exp(-V(eta)) cos(phi); inf if none."""
    target = -0.5 * np.log1p(-s * s)
    lim = INF
    if a1 > 0.0 and k1 > 0.0:
        lim = min(lim, 1.0 / (eps * k1))
    if a1 < 1.0 and k2 > 0.0:
        lim = min(lim, 1.0 / (eps * k2))
    if lim == INF or target == INF:
        return INF
    lo = eta
    hi = lim
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if dv_step(k1, k2, a1, eps, eta, mid - eta) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def _sin_at(k1, k2, a1, eps, tstar, xi, dist, flat_s, E):
    """sin(phi') at xi; ``dist`` = tstar - xi when known exactly (else < 0)."""
    if flat_s > 0.0:
        return flat_s
    if tstar < INF:
        d = dist if dist >= 0.0 else tstar - xi
        if d <= 0.0:
            return 0.0
        dv = dv_step(k1, k2, a1, eps, xi, d)
        return np.sqrt(-np.expm1(-2.0 * dv))
    c = E * np.exp(dv_step(k1, k2, a1, eps, 0.0, xi))
    v = (1.0 - c) * (1.0 + c)
    return np.sqrt(v) if v > 0.0 else 0.0


@njit(cache=True)
def _rate(k1, k2, a1, eps, tstar, v, usub, flat_s, E, vmin):
    """dG/dv at v (v = xi, or v = sqrt(tstar - xi) under the substitution)."""
    if usub:
        u = v if v > vmin else vmin
        sp = _sin_at(k1, k2, a1, eps, tstar, tstar - u * u, u * u, flat_s, E)
        return 2.0 * u / sp
    sp = _sin_at(k1, k2, a1, eps, tstar, v, -1.0, flat_s, E)
    return 1.0 / sp if sp > 0.0 else INF


@njit(cache=True)
def march_leg(eta, lo_idx, hi, upward, tstar, k1, k2, a1, eps, flat_s, E,
              gx, gw, Itil, dgmax, gcut, goffset, sign,
              bx, bw, bG, bi, bs, n0):
    """Append quadrature points of the leg [eta[lo_idx], hi] to the buffers.

    ``upward`` anchors the attenuation at the lower end (descending physical
    leg), otherwise at ``hi``.  Points store position, dG-weight,
    accumulated exponent (goffset + G from the anchor), interval index and
    signed sin(phi').  Returns (n, G_total, truncated).
    """
    ng = gx.size
    lo = eta[lo_idx]
    n = n0
    G = 0.0
    if hi <= lo:
        return n, 0.0, False
    # index of the interval containing hi from below
    top = np.searchsorted(eta, hi) - 1
    nint = top - lo_idx + 1
    cap = bx.size
    rates = np.empty(ng)
    for ii in range(nint):
        i = lo_idx + ii if upward else top - ii
        c = eta[i]
        d = eta[i + 1]
        if d > hi:
            d = hi
        if d <= c:
            continue
        usub = tstar < INF and (tstar - d) < 4.0 * (d - c)
        if usub:
            vc = np.sqrt(tstar - c)
            vd = np.sqrt(max(tstar - d, 0.0))
        else:
            vc = c
            vd = d
        if upward:
            vs = vc
            ve = vd
        else:
            vs = vd
            ve = vc
        total = abs(ve - vs)
        dirn = 1.0 if ve > vs else -1.0
        vmin = 1e-12 * total
        done = 0.0
        guard = 0
        r0 = _rate(k1, k2, a1, eps, tstar, vs, usub, flat_s, E, vmin)
        while done < total:
            guard += 1
            rem = total - done
            v0 = vs + dirn * done
            if r0 * rem <= dgmax:
                delta = rem
            else:
                delta = dgmax / r0
            if delta < 1e-9 * total:
                delta = 1e-9 * total
            if delta > rem:
                delta = rem
            r1 = _rate(k1, k2, a1, eps, tstar, v0 + dirn * delta, usub, flat_s, E, vmin)
            for _ in range(60):
                if r1 * delta <= 2.0 * dgmax or delta <= 1e-9 * total:
                    break
                delta *= 0.5
                r1 = _rate(k1, k2, a1, eps, tstar, v0 + dirn * delta, usub, flat_s, E, vmin)
            half = 0.5 * delta
            if n + ng > cap:
                raise ValueError("characteristic quadrature buffer overflow")
            for q in range(ng):
                vq = v0 + dirn * (gx[q] + 1.0) * half
                rq = _rate(k1, k2, a1, eps, tstar, vq, usub, flat_s, E, vmin)
                rates[q] = rq
                if usub:
                    bx[n + q] = tstar - vq * vq
                    bs[n + q] = sign * (2.0 * vq / rq)
                else:
                    bx[n + q] = vq
                    bs[n + q] = sign / rq
            for q in range(ng):
                gq = 0.0
                for r in range(ng):
                    gq += Itil[q, r] * rates[r]
                bw[n] = half * gw[q] * rates[q]
                bG[n] = goffset + G + half * gq
                bi[n] = i
                n += 1
            dG = 0.0
            for q in range(ng):
                dG += gw[q] * rates[q]
            G += half * dG
            done += delta
            r0 = r1
            if goffset + G > gcut:
                return n, G, True
            if guard > 100000:
                raise ValueError("panel marching did not terminate")
    return n, G, False


@njit(cache=True)
def _interp_source(Sg, g, i, x, sp, s_nodes, nh):
    """Linear interpolation of a gridded source in (eta, sin(phi)), clamped in phi."""
    nk = s_nodes.size
    if sp > 0.0:
        if sp <= s_nodes[nh]:
            k0 = nh
            k1 = nh
            t = 0.0
        elif sp >= s_nodes[nk - 1]:
            k0 = nk - 1
            k1 = nk - 1
            t = 0.0
        else:
            k1 = nh + np.searchsorted(s_nodes[nh:], sp)
            k0 = k1 - 1
            t = (sp - s_nodes[k0]) / (s_nodes[k1] - s_nodes[k0])
    else:
        if sp >= s_nodes[nh - 1]:
            k0 = nh - 1
            k1 = nh - 1
            t = 0.0
        elif sp <= s_nodes[0]:
            k0 = 0
            k1 = 0
            t = 0.0
        else:
            k1 = np.searchsorted(s_nodes[:nh], sp)
            k0 = k1 - 1
            t = (sp - s_nodes[k0]) / (s_nodes[k1] - s_nodes[k0])
    v0 = (1.0 - x) * Sg[i, k0, g] + x * Sg[i + 1, k0, g]
    v1 = (1.0 - x) * Sg[i, k1, g] + x * Sg[i + 1, k1, g]
    return (1.0 - t) * v0 + t * v1


@njit(parallel=True, cache=True)
def walk(eta, s_eval, s_nodes, k1, k2, eps, a1s, Sg, has_S, y, m, want_mat, barw,
         gx, gw, Itil, dgmax, gcut):
    """Evaluate the mild formulation at the angles ``s_eval[j, k, g]``.

    ``s_eval`` holds sin(phi) of the evaluation directions at each eta node
    and azimuthal group; ``s_nodes`` are the grid nodes on which a gridded
    source ``Sg`` is tabulated; ``barw`` are the angular-average weights
    used for the matrices.

    Returns
    -------
    K : (ne, nk, ng) attenuation exp(-G_total) of the boundary datum.
    R : (ne, nk, ng) the T-part  Σ w (fbar + S)  (weights renormalised so
        that Σ w + K = 1 on every characteristic).
    tstar : (ne, nk, ng) turning depth (inf if none).
    MA, MB : (ne, ne) angular averages of the kernel rows acting on the
        nodal values / slopes of fbar (zero unless ``want_mat``).
    """
    ne = eta.size
    nk = s_eval.shape[1]
    ngrp = a1s.size
    nq = gx.size
    nh = s_nodes.size // 2
    L = eta[ne - 1]
    K = np.zeros((ne, nk, ngrp))
    R = np.zeros((ne, nk, ngrp))
    T = np.full((ne, nk, ngrp), INF)
    MA = np.zeros((ne, ne))
    MB = np.zeros((ne, ne))
    cap = 2 * (ne + 600) * nq
    for j in prange(ne):
        bx = np.empty(cap)
        bw = np.empty(cap)
        bG = np.empty(cap)
        bi = np.empty(cap, dtype=np.int64)
        bs = np.empty(cap)
        rowA = np.zeros(ne)
        rowB = np.zeros(ne)
        ej = eta[j]
        for g in range(ngrp):
            a1 = a1s[g]
            flat = is_flat(k1, k2, a1)
            for k in range(nk):
                s = s_eval[j, k, g]
                c = np.sqrt((1.0 - s) * (1.0 + s))
                if flat:
                    flat_s = abs(s)
                    ts = INF
                    E = c
                else:
                    flat_s = -1.0
                    ts = turning_depth(k1, k2, a1, eps, ej, abs(s))
                    E = c * np.exp(-dv_step(k1, k2, a1, eps, 0.0, ej))
                T[j, k, g] = ts
                if s > 0.0:
                    n, Ga, trunc = march_leg(eta, 0, ej, False, ts, k1, k2, a1, eps, flat_s, E,
                                             gx, gw, Itil, dgmax, gcut, 0.0, 1.0,
                                             bx, bw, bG, bi, bs, 0)
                    Kv = 0.0 if trunc else np.exp(-Ga)
                else:
                    top = L if ts >= L else ts
                    n, Gd, trunc = march_leg(eta, j, top, True, ts, k1, k2, a1, eps, flat_s, E,
                                             gx, gw, Itil, dgmax, gcut, 0.0, -1.0,
                                             bx, bw, bG, bi, bs, 0)
                    if trunc:
                        Kv = 0.0
                    else:
                        n, Ga, trunc = march_leg(eta, 0, top, False, ts, k1, k2, a1, eps, flat_s, E,
                                                 gx, gw, Itil, dgmax, gcut, Gd, 1.0,
                                                 bx, bw, bG, bi, bs, n)
                        Kv = 0.0 if trunc else np.exp(-(Gd + Ga))
                sumw = 0.0
                for p in range(n):
                    bw[p] *= np.exp(-bG[p])
                    sumw += bw[p]
                scale = (1.0 - Kv) / sumw if sumw > 0.0 else 0.0
                acc = 0.0
                imin = ne
                imax = -1
                for p in range(n):
                    wt = scale * bw[p]
                    i = bi[p]
                    h = eta[i + 1] - eta[i]
                    x = (bx[p] - eta[i]) / h
                    x2 = x * x
                    h00 = (1.0 + 2.0 * x) * (1.0 - x) * (1.0 - x)
                    h10 = x * (1.0 - x) * (1.0 - x) * h
                    h01 = x2 * (3.0 - 2.0 * x)
                    h11 = x2 * (x - 1.0) * h
                    val = h00 * y[i] + h10 * m[i] + h01 * y[i + 1] + h11 * m[i + 1]
                    if has_S:
                        val += _interp_source(Sg, g, i, x, bs[p], s_nodes, nh)
                    acc += wt * val
                    if want_mat:
                        rowA[i] += wt * h00
                        rowA[i + 1] += wt * h01
                        rowB[i] += wt * h10
                        rowB[i + 1] += wt * h11
                        if i < imin:
                            imin = i
                        if i + 1 > imax:
                            imax = i + 1
                K[j, k, g] = Kv
                R[j, k, g] = acc
                if want_mat and imax >= 0:
                    bwt = barw[j, k, g]
                    for i in range(imin, imax + 1):
                        MA[j, i] += bwt * rowA[i]
                        MB[j, i] += bwt * rowB[i]
                        rowA[i] = 0.0
                        rowB[i] = 0.0
    return K, R, T, MA, MB


def gauss_tables(n: int):
    """Gauss-Legendre nodes/weights on [-1, 1] and the running-integral matrix.

    ``Itil[q, r] = ∫_{-1}^{x_q} l_r(x) dx`` for the Lagrange basis l_r on the
    nodes, so ``Σ_r Itil[q, r] f(x_r)`` integrates f from -1 to x_q exactly
    for polynomials of degree < n.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    V = np.polynomial.legendre.legvander(x, n - 1)  # V[q, k] = P_k(x_q)
    # ∫_{-1}^{x} P_k = (P_{k+1} - P_{k-1}) / (2k + 1) for k >= 1, and x + 1 for k = 0
    P = np.polynomial.legendre.legvander(x, n)
    prim = np.empty((n, n))
    prim[:, 0] = x + 1.0
    for k in range(1, n):
        prim[:, k] = (P[:, k + 1] - P[:, k - 1]) / (2 * k + 1)
    Itil = prim @ np.linalg.inv(V)
    return x, w, Itil
