"""Compiled inner loops for kernel integrals, per-event likelihood terms and gradients.

Conventions shared by every routine here:

* parameters arrive as full stacked arrays ``a1, a2, b1, a3`` of shape
  (D, D, P), ``b2`` of shape (D, D) and ``mu`` of shape (D,);
* gradients are *accumulated* into caller-owned arrays of the same shapes,
  multiplied by a caller-supplied weight;
* ``window`` is ``np.inf`` when history is not truncated;
* routines return a status code instead of raising: 0 ok, 1 exponent
  overflow, 2 non-positive intensity at an event.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

EXP_LIMIT = 700.0
MERGE_TOL = 1e-12

STATUS_OK = 0
STATUS_OVERFLOW = 1
STATUS_NONPOSITIVE = 2


@njit(cache=True)
def expm1_ratio(x):
    # (e^x - 1) / x
    if abs(x) < 1e-5:
        return 1.0 + x * (0.5 + x / 6.0)
    return math.expm1(x) / x


@njit(cache=True)
def first_moment_ratio(x):
    # int_0^1 v e^{x v} dv = (x e^x - e^x + 1) / x^2
    if abs(x) < 1e-3:
        return 0.5 + x * (1.0 / 3.0 + x * (0.125 + x / 30.0))
    return (x * math.exp(x) - math.expm1(x)) / (x * x)


@njit(cache=True)
def sorted_breakpoints(a1, a2, b1, m, lo, hi):
    """Hidden-unit zero crossings strictly inside (lo, hi), with both ends, merged."""
    p = a1.shape[0]
    ys = np.empty(p)
    nb = 0
    for i in range(p):
        if a1[i] != 0.0:
            y = -(a2[i] * m + b1[i]) / a1[i]
            if y > lo + MERGE_TOL and y < hi - MERGE_TOL:
                ys[nb] = y
                nb += 1
    ys = np.sort(ys[:nb])
    pts = np.empty(nb + 2)
    pts[0] = lo
    n = 1
    for i in range(nb):
        if ys[i] - pts[n - 1] > MERGE_TOL:
            pts[n] = ys[i]
            n += 1
    pts[n] = hi
    return pts[: n + 1]


@njit(cache=True)
def exp_net_integral(a1, a2, b1, a3, b2, m, lo, hi, w, want_grad, ga1, ga2, gb1, ga3):
    """int_lo^hi exp(b2 + sum_i a3_i relu(a1_i s + a2_i m + b1_i)) ds.

    With ``want_grad`` adds ``w * d(integral)/d(param)`` into ga1, ga2, gb1,
    ga3 (vectors of length P).  d/db2 equals the integral itself.
    Returns (value, status, failing segment start, failing segment end).
    """
    if not hi > lo:
        return 0.0, STATUS_OK, lo, hi
    pts = sorted_breakpoints(a1, a2, b1, m, lo, hi)
    p = a1.shape[0]
    total = 0.0
    for s in range(pts.shape[0] - 1):
        sa = pts[s]
        sb = pts[s + 1]
        h = sb - sa
        mid = 0.5 * (sa + sb)
        c1 = 0.0
        ea = b2
        for i in range(p):
            if a1[i] * mid + a2[i] * m + b1[i] > 0.0:
                c1 += a3[i] * a1[i]
                ea += a3[i] * (a1[i] * sa + a2[i] * m + b1[i])
        x = c1 * h
        if ea > EXP_LIMIT or ea + x > EXP_LIMIT:
            return np.inf, STATUS_OVERFLOW, sa, sb
        scale = math.exp(ea)
        i0 = scale * h * expm1_ratio(x)
        i1 = sa * i0 + scale * h * h * first_moment_ratio(x)
        total += i0
        if want_grad:
            for i in range(p):
                if a1[i] * mid + a2[i] * m + b1[i] > 0.0:
                    ga3[i] += w * (a1[i] * i1 + (a2[i] * m + b1[i]) * i0)
                    ga1[i] += w * a3[i] * i1
                    ga2[i] += w * a3[i] * m * i0
                    gb1[i] += w * a3[i] * i0
    return total, STATUS_OK, lo, hi


@njit(cache=True)
def net_value(a1, a2, b1, a3, b2, t, m, exponential, w, want_grad, ga1, ga2, gb1, ga3):
    """phi(t, m); with ``want_grad`` adds ``w * dphi/dparam`` (b2 part is returned value for exp link, 1 otherwise)."""
    p = a1.shape[0]
    z = b2
    for i in range(p):
        h = a1[i] * t + a2[i] * m + b1[i]
        if h > 0.0:
            z += a3[i] * h
    if exponential:
        if z > EXP_LIMIT:
            return np.inf
        val = math.exp(z)
    else:
        val = z
    if want_grad:
        scale = w * val if exponential else w
        for i in range(p):
            h = a1[i] * t + a2[i] * m + b1[i]
            if h > 0.0:
                ga3[i] += scale * h
                ga1[i] += scale * a3[i] * t
                ga2[i] += scale * a3[i] * m
                gb1[i] += scale * a3[i]
    return val


@njit(cache=True)
def pre_intensity_at(t, n_end, d, times, dims, marks, mu, a1, a2, b1, a3, b2, window,
                     exponential, w, want_grad, gmu, ga1, ga2, gb1, ga3, gb2):
    """mu_d + sum over events k < n_end with 0 < t - t_k <= window of phi_{d, dim_k}."""
    lam = mu[d]
    if want_grad:
        gmu[d] += w
    for k in range(n_end - 1, -1, -1):
        lag = t - times[k]
        if lag <= 0.0:
            continue
        if lag > window:
            break
        j = dims[k]
        v = net_value(a1[d, j], a2[d, j], b1[d, j], a3[d, j], b2[d, j], lag, marks[k],
                      exponential, w, want_grad, ga1[d, j], ga2[d, j], gb1[d, j], ga3[d, j])
        lam += v
        if want_grad:
            gb2[d, j] += w * v if exponential else w
    return lam


@njit(cache=True)
def snh_compensator(lo_t, hi_t, n_end, d, times, dims, marks, mu, a1, a2, b1, a3, b2, window,
                    w, want_grad, gmu, ga1, ga2, gb1, ga3, gb2):
    """int_{lo_t}^{hi_t} lambda_d(s) ds for the linear model, history = events k < n_end."""
    total = mu[d] * (hi_t - lo_t)
    if want_grad:
        gmu[d] += w * (hi_t - lo_t)
    for k in range(n_end - 1, -1, -1):
        tk = times[k]
        if tk >= hi_t:
            continue
        if lo_t - tk >= window:
            break
        lo = max(0.0, lo_t - tk)
        hi = min(window, hi_t - tk)
        if not hi > lo:
            continue
        j = dims[k]
        val, status, sa, sb = exp_net_integral(
            a1[d, j], a2[d, j], b1[d, j], a3[d, j], b2[d, j], marks[k], lo, hi,
            w, want_grad, ga1[d, j], ga2[d, j], gb1[d, j], ga3[d, j])
        if status != STATUS_OK:
            return np.inf, status, k
        total += val
        if want_grad:
            gb2[d, j] += w * val
    return total, STATUS_OK, -1


@njit(cache=True)
def _positive_part(c0, c1, p, q):
    """For A(u) = c0 + c1 u on [p, q]: (int A^+, measure of {A>0}, int u 1{A>0})."""
    ap = c0 + c1 * p
    aq = c0 + c1 * q
    if ap >= 0.0 and aq >= 0.0:
        return 0.5 * (ap + aq) * (q - p), q - p, 0.5 * (q * q - p * p)
    if ap <= 0.0 and aq <= 0.0:
        return 0.0, 0.0, 0.0
    r = p + (q - p) * ap / (ap - aq)
    if ap > 0.0:
        return 0.5 * ap * (r - p), r - p, 0.5 * (r * r - p * p)
    return 0.5 * aq * (q - r), q - r, 0.5 * (q * q - r * r)


@njit(cache=True)
def nnnh_compensator(lo_t, hi_t, n_end, d, times, dims, marks, mu, a1, a2, b1, a3, b2, window,
                     w, want_grad, gmu, ga1, ga2, gb1, ga3, gb2):
    """int_{lo_t}^{hi_t} max(mu_d + sum phi, 0) ds for the clamped model.

    Every (past event, neuron) pair and every past event's constant b2 term
    is an affine "item" switched on over one sub-interval.  Sorting the
    switch positions gives segments on which the pre-clamp intensity is
    affine; each segment's positive part is integrated exactly, and item
    gradients come from cumulative integrals of the positivity indicator.
    """
    length = hi_t - lo_t
    if not length > 0.0:
        return 0.0, STATUS_OK, -1
    p = a1.shape[2]
    k_first = n_end
    for k in range(n_end - 1, -1, -1):
        if times[k] + window <= lo_t:
            break
        k_first = k
    cap = (n_end - k_first) * (p + 1)
    start = np.empty(cap)
    stop = np.empty(cap)
    slope = np.empty(cap)
    icept = np.empty(cap)
    item_k = np.empty(cap, dtype=np.int64)
    item_i = np.empty(cap, dtype=np.int64)
    n_items = 0
    for k in range(k_first, n_end):
        tk = times[k]
        if tk >= hi_t:
            continue
        s0 = max(tk, lo_t)
        s1 = min(tk + window, hi_t)
        if not s1 > s0:
            continue
        j = dims[k]
        m = marks[k]
        start[n_items] = s0 - lo_t
        stop[n_items] = s1 - lo_t
        slope[n_items] = 0.0
        icept[n_items] = b2[d, j]
        item_k[n_items] = k
        item_i[n_items] = -1
        n_items += 1
        for i in range(p):
            c = a2[d, j, i] * m + b1[d, j, i]
            g = a1[d, j, i]
            u0 = s0
            u1 = s1
            if g == 0.0:
                if not c > 0.0:
                    continue
            else:
                y = tk - c / g
                if g > 0.0:
                    u0 = max(u0, y)
                else:
                    u1 = min(u1, y)
            if not u1 > u0:
                continue
            start[n_items] = u0 - lo_t
            stop[n_items] = u1 - lo_t
            slope[n_items] = a3[d, j, i] * g
            icept[n_items] = a3[d, j, i] * (g * (lo_t - tk) + c)
            item_k[n_items] = k
            item_i[n_items] = i
            n_items += 1

    n_tog = 2 * n_items
    pos = np.empty(n_tog)
    for q in range(n_items):
        pos[2 * q] = start[q]
        pos[2 * q + 1] = stop[q]
    order = np.argsort(pos, kind="mergesort")
    cum0 = np.empty(n_tog)
    cum1 = np.empty(n_tog)

    c0 = mu[d]
    c1 = 0.0
    area = 0.0
    acc0 = 0.0
    acc1 = 0.0
    prev = 0.0
    for r in range(n_tog):
        tog = order[r]
        u = pos[tog]
        if u > prev:
            da, d0, d1 = _positive_part(c0, c1, prev, u)
            area += da
            acc0 += d0
            acc1 += d1
            prev = u
        cum0[tog] = acc0
        cum1[tog] = acc1
        q = tog // 2
        if tog % 2 == 0:
            c0 += icept[q]
            c1 += slope[q]
        else:
            c0 -= icept[q]
            c1 -= slope[q]
    if length > prev:
        da, d0, d1 = _positive_part(c0, c1, prev, length)
        area += da
        acc0 += d0
        acc1 += d1

    if want_grad:
        gmu[d] += w * acc0
        for q in range(n_items):
            j0 = cum0[2 * q + 1] - cum0[2 * q]
            if j0 == 0.0:
                continue
            j1 = cum1[2 * q + 1] - cum1[2 * q]
            k = item_k[q]
            j = dims[k]
            i = item_i[q]
            if i < 0:
                gb2[d, j] += w * j0
                continue
            offset = lo_t - times[k]
            g = a1[d, j, i]
            c = a2[d, j, i] * marks[k] + b1[d, j, i]
            moment = j1 + offset * j0  # int (s - t_k) 1{A>0} ds over the item's range
            ga3[d, j, i] += w * (g * moment + c * j0)
            ga1[d, j, i] += w * a3[d, j, i] * moment
            ga2[d, j, i] += w * a3[d, j, i] * marks[k] * j0
            gb1[d, j, i] += w * a3[d, j, i] * j0
    return area, STATUS_OK, -1


@njit(cache=True)
def compensator(nonlinear, lo_t, hi_t, n_end, d, times, dims, marks, mu, a1, a2, b1, a3, b2,
                window, w, want_grad, gmu, ga1, ga2, gb1, ga3, gb2):
    if nonlinear:
        return nnnh_compensator(lo_t, hi_t, n_end, d, times, dims, marks, mu, a1, a2, b1, a3,
                                b2, window, w, want_grad, gmu, ga1, ga2, gb1, ga3, gb2)
    return snh_compensator(lo_t, hi_t, n_end, d, times, dims, marks, mu, a1, a2, b1, a3, b2,
                           window, w, want_grad, gmu, ga1, ga2, gb1, ga3, gb2)


@njit(cache=True)
def event_terms(nonlinear, idx, prev_times, times, dims, marks, mu, a1, a2, b1, a3, b2, window,
                floor, want_grad, weight, gmu, ga1, ga2, gb1, ga3, gb2):
    """Per-event log-intensity and interval compensator for events ``idx``.

    For event n of dimension d the likelihood contribution is
    ``log lambda_d(t_n) - int_{prev_times[n]}^{t_n} lambda_d``.  With
    ``want_grad`` the gradient of ``weight`` times the summed contribution
    is accumulated, in the order of ``idx``.

    Returns (intensity at each event, compensator of each interval,
    status per event, clamped flag per event).
    """
    n_ev = idx.shape[0]
    lam_out = np.empty(n_ev)
    comp_out = np.empty(n_ev)
    status_out = np.zeros(n_ev, dtype=np.int64)
    clamped = np.zeros(n_ev, dtype=np.bool_)
    dd, pp = a1.shape[0], a1.shape[2]
    if want_grad:
        lmu = np.zeros(dd)
        la1 = np.zeros((dd, dd, pp))
        la2 = np.zeros((dd, dd, pp))
        lb1 = np.zeros((dd, dd, pp))
        la3 = np.zeros((dd, dd, pp))
        lb2 = np.zeros((dd, dd))
    else:
        lmu = np.zeros(1)
        la1 = np.zeros((1, 1, 1))
        la2 = la1
        lb1 = la1
        la3 = la1
        lb2 = np.zeros((1, 1))
    for r in range(n_ev):
        n = idx[r]
        d = dims[n]
        tn = times[n]
        if want_grad:
            lmu[d] = 0.0
            la1[d] = 0.0
            la2[d] = 0.0
            lb1[d] = 0.0
            la3[d] = 0.0
            lb2[d] = 0.0
        lam = pre_intensity_at(tn, n, d, times, dims, marks, mu, a1, a2, b1, a3, b2, window,
                               not nonlinear, 1.0, want_grad, lmu, la1, la2, lb1, la3, lb2)
        comp, status, _ = compensator(nonlinear, prev_times[n], tn, n, d, times, dims, marks, mu,
                                      a1, a2, b1, a3, b2, window, -weight, want_grad,
                                      gmu, ga1, ga2, gb1, ga3, gb2)
        lam_out[r] = lam
        comp_out[r] = comp
        if status != STATUS_OK:
            status_out[r] = status
            continue
        if nonlinear:
            if lam <= floor:
                clamped[r] = True
                continue
        elif not lam > 0.0:
            status_out[r] = STATUS_NONPOSITIVE
            continue
        elif not np.isfinite(lam):
            status_out[r] = STATUS_OVERFLOW
            continue
        if want_grad:
            s = weight / lam
            gmu[d] += s * lmu[d]
            ga1[d] += s * la1[d]
            ga2[d] += s * la2[d]
            gb1[d] += s * lb1[d]
            ga3[d] += s * la3[d]
            gb2[d] += s * lb2[d]
    return lam_out, comp_out, status_out, clamped


@njit(cache=True)
def pooled_compensator(nonlinear, a, b, d, times, dims, marks, mu, a1, a2, b1, a3, b2, window,
                       w, want_grad, gmu, ga1, ga2, gb1, ga3, gb2):
    """int_a^b lambda_d over the pooled event grid (one piece between consecutive event times)."""
    n_all = times.shape[0]
    total = 0.0
    lo = a
    k = 0
    while k < n_all and times[k] <= a:
        k += 1
    while lo < b:
        hi = b
        if k < n_all and times[k] < b:
            hi = times[k]
        n_end = k
        while n_end < n_all and times[n_end] < hi:
            n_end += 1
        if hi > lo:
            val, status, bad = compensator(nonlinear, lo, hi, n_end, d, times, dims, marks, mu,
                                           a1, a2, b1, a3, b2, window, w, want_grad,
                                           gmu, ga1, ga2, gb1, ga3, gb2)
            if status != STATUS_OK:
                return np.inf, status, bad
            total += val
        lo = hi
        while k < n_all and times[k] <= lo:
            k += 1
    return total, STATUS_OK, -1
