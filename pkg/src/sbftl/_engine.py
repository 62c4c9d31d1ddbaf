"""Compiled inner loops of the backfitting engine.

For each covariate j and observation i the nonzero normalized kernel weights
K_h(x_g, X_j^i) are stored in a padded band: ``lo[j, i]`` is the first grid
index, ``nb[j, i]`` the band length, ``w0[j, i, k]`` the weight at grid index
lo + k and ``w1`` the same weight times (X_j^i - x_g) / h.  Tuple vectors are
passed as two length-G arrays (value, h * derivative).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _kern(u, kid):
    if u <= -1.0 or u >= 1.0:
        return 0.0
    t = 1.0 - u * u
    if kid == 0:
        return 0.75 * t
    return 0.9375 * t * t


@njit(cache=True)
def band_weights(x, den, h, kid, pts, spacing, width, lo, nb, w0, w1):
    """Fill one covariate's band arrays (``lo``, ``nb`` of shape (n,), ``w0``, ``w1`` (n, width))."""
    G = pts.shape[0]
    for i in range(x.shape[0]):
        xi = x[i]
        a = int(np.ceil((xi - h) / spacing - 1e-12))
        b = int(np.floor((xi + h) / spacing + 1e-12))
        if a < 0:
            a = 0
        if b > G - 1:
            b = G - 1
        lo[i] = a
        scale = 1.0 / (h * den[i])
        m = 0
        for g in range(a, b + 1):
            if m >= width:
                break
            dist = (xi - pts[g]) / h
            k = _kern(dist, kid) * scale
            w0[i, m] = k
            w1[i, m] = k * dist
            m += 1
        nb[i] = m
        for k in range(m, width):
            w0[i, k] = 0.0
            w1[i, k] = 0.0


@njit(cache=True, fastmath=True)
def scores(lo, nb, w0, w1, wq, v0, v1, out):
    """out[i] = int (v0(u) + (X_i - u)/h * v1(u)) K_h(u, X_i) du on the grid."""
    for i in range(lo.shape[0]):
        base = lo[i]
        s = 0.0
        for k in range(nb[i]):
            g = base + k
            s += wq[g] * (w0[i, k] * v0[g] + w1[i, k] * v1[g])
        out[i] = s


@njit(cache=True, fastmath=True)
def field(lo, nb, w0, w1, coef, f0, f1):
    """f0(u) = sum_i coef_i K_h(u, X_i), f1(u) = sum_i coef_i (X_i - u)/h K_h(u, X_i)."""
    f0[:] = 0.0
    f1[:] = 0.0
    for i in range(lo.shape[0]):
        c = coef[i]
        if c == 0.0:
            continue
        base = lo[i]
        for k in range(nb[i]):
            g = base + k
            f0[g] += c * w0[i, k]
            f1[g] += c * w1[i, k]


@njit(cache=True)
def update_one(j, lam, vecs, offv, has_off, S, offS, total, norms,
               lo, nb, w0, w1, wq, obs_w, resp_numer,
               inv00, inv01, inv11, m00, m01, m11, a, b, f0, f1, coef, snew):
    """Two-stage update of covariate j; returns (sup change of value, unpenalized norm).

    On return ``a``, ``b`` hold the centered unpenalized tuple vector.
    """
    N = S.shape[0]
    G = wq.shape[0]
    for i in range(N):
        coef[i] = obs_w[i] * (total[i] - S[i, j])
    field(lo[j], nb[j], w0[j], w1[j], coef, f0, f1)
    num = 0.0
    mass = 0.0
    for g in range(G):
        r0 = resp_numer[j, g, 0] - f0[g]
        r1 = resp_numer[j, g, 1] - f1[g]
        a[g] = inv00[j, g] * r0 + inv01[j, g] * r1
        b[g] = inv01[j, g] * r0 + inv11[j, g] * r1
        if has_off:
            a[g] -= offv[j, g, 0]
            b[g] -= offv[j, g, 1]
        num += wq[g] * (a[g] * m00[j, g] + b[g] * m01[j, g])
        mass += wq[g] * m00[j, g]
    c = num / mass
    q = 0.0
    for g in range(G):
        a[g] -= c
        q += wq[g] * (m00[j, g] * a[g] * a[g] + 2.0 * m01[j, g] * a[g] * b[g] + m11[j, g] * b[g] * b[g])
    nrm = np.sqrt(q) if q > 0.0 else 0.0
    if lam == 0.0:
        factor = 1.0
    elif nrm <= lam:
        factor = 0.0
    else:
        factor = 1.0 - lam / nrm
    change = 0.0
    was_zero = True
    for g in range(G):
        if vecs[j, g, 0] != 0.0 or vecs[j, g, 1] != 0.0:
            was_zero = False
        na = factor * a[g]
        nb_ = factor * b[g]
        dv = abs(na - vecs[j, g, 0])
        if dv > change:
            change = dv
        vecs[j, g, 0] = na
        vecs[j, g, 1] = nb_
    norms[j] = factor * nrm
    if factor == 0.0:
        if was_zero:
            return change, nrm
        for i in range(N):
            snew[i] = offS[i, j] if has_off else 0.0
    else:
        scores(lo[j], nb[j], w0[j], w1[j], wq, vecs[j, :, 0], vecs[j, :, 1], snew)
        if has_off:
            for i in range(N):
                snew[i] += offS[i, j]
    for i in range(N):
        total[i] += snew[i] - S[i, j]
        S[i, j] = snew[i]
    return change, nrm


@njit(cache=True)
def cycle(order, visit, lam, vecs, offv, has_off, S, offS, total, norms,
          lo, nb, w0, w1, wq, obs_w, resp_numer,
          inv00, inv01, inv11, m00, m01, m11, changes):
    N = S.shape[0]
    G = wq.shape[0]
    a = np.empty(G)
    b = np.empty(G)
    f0 = np.empty(G)
    f1 = np.empty(G)
    coef = np.empty(N)
    snew = np.empty(N)
    for t in range(order.shape[0]):
        j = order[t]
        if not visit[j]:
            continue
        ch, _ = update_one(j, lam, vecs, offv, has_off, S, offS, total, norms,
                           lo, nb, w0, w1, wq, obs_w, resp_numer,
                           inv00, inv01, inv11, m00, m01, m11, a, b, f0, f1, coef, snew)
        changes[j] = ch
