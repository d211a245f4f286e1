"""Compiled scalar kernels for optimiser inner loops.

These mirror ``model.plan_cells`` and the objectives in ``divergence`` without
the Jacobian; the numpy versions remain the reference and the test suite
checks the two agree.
"""

import math

import numpy as np
from numba import njit

EPS_P = 1e-300


@njit(cache=True)
def _interval_integral(ac, tc, ao, to, lo, hi):
    th = tc + to
    k = tc * tc / ((ac * tc + 1.0) * (ao * to + 1.0))
    A = to
    B = 1.0 + to * (ac + ao)
    C = ac * (1.0 + ao * to)
    th2 = th * th
    e_lo = math.exp(-th * lo)
    e_hi = math.exp(-th * hi)
    h_lo = A * (th2 * lo * lo + 2.0 * th * lo + 2.0) + B * th * (th * lo + 1.0) + C * th2
    h_hi = A * (th2 * hi * hi + 2.0 * th * hi + 2.0) + B * th * (th * hi + 1.0) + C * th2
    return k * (e_lo * h_lo - e_hi * h_hi) / (th2 * th)


@njit(cache=True)
def cells(x, s, tau):
    """(I, 2L + 1) cell probabilities; NaN-filled if a link overflows."""
    I = tau.shape[0]
    L = tau.shape[1] - 1
    out = np.empty((I, 2 * L + 1))
    for i in range(I):
        a1 = math.exp(x[0] * s[i])
        t1 = math.exp(x[1] * s[i])
        a2 = math.exp(x[2] * s[i])
        t2 = math.exp(x[3] * s[i])
        if not (math.isfinite(a1) and math.isfinite(t1) and math.isfinite(a2) and math.isfinite(t2)):
            out[:, :] = np.nan
            return out
        for l in range(L):
            out[i, 2 * l] = _interval_integral(a1, t1, a2, t2, tau[i, l], tau[i, l + 1])
            out[i, 2 * l + 1] = _interval_integral(a2, t2, a1, t1, tau[i, l], tau[i, l + 1])
        tl = tau[i, L]
        d1 = a1 * t1 + 1.0
        d2 = a2 * t2 + 1.0
        out[i, 2 * L] = (1.0 + t1 * tl / d1) * math.exp(-t1 * tl) * (1.0 + t2 * tl / d2) * math.exp(-t2 * tl)
    return out


@njit(cache=True)
def neg_loglik(x, s, tau, n):
    p = cells(x, s, tau)
    total = 0.0
    for i in range(p.shape[0]):
        for h in range(p.shape[1]):
            if n[i, h] > 0:
                if not p[i, h] > 0.0:
                    return np.inf
                total += n[i, h] * math.log(p[i, h])
    return -total


@njit(cache=True)
def neg_bw(x, s, tau, qhat, w, gamma):
    p = cells(x, s, tau)
    total = 0.0
    for i in range(p.shape[0]):
        acc = 0.0
        for h in range(p.shape[1]):
            ph = p[i, h]
            if not ph == ph:
                return np.inf
            lp = math.log(max(ph, EPS_P))
            acc += qhat[i, h] * math.exp(gamma * lp) / gamma - math.exp((gamma + 1.0) * lp) / (gamma + 1.0)
        total += w[i] * acc
    return -total


@njit(cache=True)
def _edge(ac, tc, ao, to, t, out):
    """E(t) and its partials in (ac, tc, ao, to) for one interval end."""
    th = tc + to
    A = to
    B = 1.0 + to * (ac + ao)
    C = ac * (1.0 + ao * to)
    e = math.exp(-th * t)
    th3 = th * th * th
    pa = th * th * t * t + 2.0 * th * t + 2.0
    pb = th * (th * t + 1.0)
    pc = th * th
    E = e * (A * pa + B * pb + C * pc) / th3
    dpoly = A * (2.0 * th * t * t + 2.0 * t) + B * (2.0 * th * t + 1.0) + 2.0 * C * th
    dth = E * (-t - 3.0 / th) + e * dpoly / th3
    dA = e * pa / th3
    dB = e * pb / th3
    dC = e * pc / th3
    out[0] = dB * to + dC * (1.0 + ao * to)
    out[1] = dth
    out[2] = dB * to + dC * ac * to
    out[3] = dth + dA + dB * (ac + ao) + dC * ac * ao
    return E


@njit(cache=True)
def cells_jac(x, s, tau):
    """Cells and the (I, 4, 2L + 1) Jacobian in (a1, b1, a2, b2).

    Returns ok=False when a link overflows or a Lindley parameter is invalid.
    """
    I = tau.shape[0]
    L = tau.shape[1] - 1
    M = 2 * L + 1
    p = np.empty((I, M))
    jac = np.zeros((I, 4, M))
    d_lo = np.empty(4)
    d_hi = np.empty(4)
    dk = np.empty(4)
    for i in range(I):
        si = s[i]
        lk = np.empty(4)  # alpha1, theta1, alpha2, theta2
        for j in range(4):
            lk[j] = math.exp(x[j] * si)
            if not math.isfinite(lk[j]) or lk[j] <= 0.0:
                return p, jac, False
        for cause in range(2):
            if cause == 0:
                ac, tc, ao, to = lk[0], lk[1], lk[2], lk[3]
                # position in (a1, b1, a2, b2) of (ac, tc, ao, to)
                m0, m1, m2, m3 = 0, 1, 2, 3
            else:
                ac, tc, ao, to = lk[2], lk[3], lk[0], lk[1]
                m0, m1, m2, m3 = 2, 3, 0, 1
            dc = ac * tc + 1.0
            do = ao * to + 1.0
            k = tc * tc / (dc * do)
            dk[0] = -k * tc / dc
            dk[1] = k * (2.0 / tc - ac / dc)
            dk[2] = -k * to / do
            dk[3] = -k * ao / do
            E_lo = _edge(ac, tc, ao, to, tau[i, 0], d_lo)
            for l in range(L):
                E_hi = _edge(ac, tc, ao, to, tau[i, l + 1], d_hi)
                h = 2 * l + cause
                diff = E_lo - E_hi
                p[i, h] = k * diff
                # chain rule: d link / d coefficient = s * link
                jac[i, m0, h] = (dk[0] * diff + k * (d_lo[0] - d_hi[0])) * si * ac
                jac[i, m1, h] = (dk[1] * diff + k * (d_lo[1] - d_hi[1])) * si * tc
                jac[i, m2, h] = (dk[2] * diff + k * (d_lo[2] - d_hi[2])) * si * ao
                jac[i, m3, h] = (dk[3] * diff + k * (d_lo[3] - d_hi[3])) * si * to
                E_lo = E_hi
                for j in range(4):
                    d_lo[j] = d_hi[j]
        tl = tau[i, L]
        sf = np.empty(2)
        dsa = np.empty(2)
        dst = np.empty(2)
        for r in range(2):
            a = lk[2 * r]
            t_ = lk[2 * r + 1]
            d = a * t_ + 1.0
            e = math.exp(-t_ * tl)
            sf[r] = (1.0 + t_ * tl / d) * e
            dsa[r] = -(t_ * t_) * tl / (d * d) * e
            dst[r] = e * (tl / (d * d) - tl * (1.0 + t_ * tl / d))
        p[i, M - 1] = sf[0] * sf[1]
        jac[i, 0, M - 1] = dsa[0] * sf[1] * si * lk[0]
        jac[i, 1, M - 1] = dst[0] * sf[1] * si * lk[1]
        jac[i, 2, M - 1] = dsa[1] * sf[0] * si * lk[2]
        jac[i, 3, M - 1] = dst[1] * sf[0] * si * lk[3]
    return p, jac, True
