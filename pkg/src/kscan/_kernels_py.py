"""Numpy implementations of the hot scan kernels.

These mirror ``_kernels.pyx`` operation for operation; only the order of
floating-point summation differs.  They are used when the compiled module is
unavailable or when ``KSCAN_BACKEND=python`` is set.
"""

from __future__ import annotations

import math

import numpy as np

from . import _rates


def bernoulli_evaluator(K, mflag, out_m, out_u):
    """Return ``evaluate(p, q)`` for the normalized Bernoulli log-likelihood.

    Points not listed in ``K`` (``out_m`` measured, ``out_u`` unmeasured) have
    kernel value zero and enter through their counts only.
    """
    n = K.shape[0] + out_m + out_u
    Km = K[mflag]
    Ku = K[~mflag]
    Km1 = 1.0 - Km
    Ku1 = 1.0 - Ku
    m_pp, m_pq, m_qq = Km * Km, Km * Km1, Km1 * Km1
    u_pp, u_pq, u_qq = Ku * Ku, Ku * Ku1, Ku1 * Ku1
    a = float(out_m)
    b = float(out_u)

    def evaluate(p, q):
        g = p * Km + q * Km1
        h = (1.0 - p) * Ku + (1.0 - q) * Ku1
        if (g <= 0.0).any() or (h <= 0.0).any():
            return None
        if (a > 0 and q <= 0.0) or (b > 0 and 1.0 - q <= 0.0):
            return None
        ig = 1.0 / g
        ih = 1.0 / h
        ig2 = ig * ig
        ih2 = ih * ih
        f = np.log(g).sum() + np.log(h).sum()
        gp = Km @ ig - Ku @ ih
        gq = Km1 @ ig - Ku1 @ ih
        hpp = -(m_pp @ ig2 + u_pp @ ih2)
        hpq = -(m_pq @ ig2 + u_pq @ ih2)
        hqq = -(m_qq @ ig2 + u_qq @ ih2)
        if a > 0:
            f += a * math.log(q)
            gq += a / q
            hqq -= a / (q * q)
        if b > 0:
            f += b * math.log(1.0 - q)
            gq -= b / (1.0 - q)
            hqq -= b / ((1.0 - q) * (1.0 - q))
        return (float(f) / n, float(gp) / n, float(gq) / n,
                float(hpp) / n, float(hpq) / n, float(hqq) / n)

    return evaluate


def bernoulli_null(n_measured, n):
    q0 = n_measured / n
    if n_measured == 0 or n_measured == n:
        return q0, 0.0
    return q0, (n_measured * math.log(q0) + (n - n_measured) * math.log(1.0 - q0)) / n


def solve_bernoulli(K, mflag, out_m, out_u, p0, q0, max_steps, tol, enforce, trace=None):
    """Maximize the Bernoulli likelihood over (p, q) for fixed kernel values.

    Returns ``(p, q, phi, steps, converged)`` with phi relative to the null.
    """
    K = np.asarray(K, dtype=np.float64)
    mflag = np.asarray(mflag, dtype=bool)
    n = K.shape[0] + out_m + out_u
    mt = int(np.count_nonzero(mflag)) + out_m
    qn, ell0 = bernoulli_null(mt, n)
    if mt == 0 or mt == n or K.shape[0] == 0 or K.max() == 0.0:
        return qn, qn, 0.0, 0, True
    Km = K[mflag]
    Ku = K[~mflag]
    kmin_m = kmax_m = kmin_u = kmax_u = None
    if Km.shape[0]:
        kmin_m, kmax_m = float(Km.min()), float(Km.max())
    if out_m > 0:
        kmin_m, kmax_m = 0.0, (kmax_m if kmax_m is not None else 0.0)
    if Ku.shape[0]:
        kmin_u, kmax_u = float(Ku.min()), float(Ku.max())
    if out_u > 0:
        kmin_u, kmax_u = 0.0, (kmax_u if kmax_u is not None else 0.0)
    rows = _rates.bernoulli_constraints(n, kmin_m, kmax_m, kmin_u, kmax_u, enforce)
    evaluate = bernoulli_evaluator(K, mflag, out_m, out_u)
    p, q = _rates.project(p0, q0, rows)
    res = evaluate(p, q)
    if res is None or res[0] < ell0:
        p, q = qn, qn
    p, q, f, steps, conv = _rates.maximize(evaluate, rows, p, q, max_steps, tol, trace)
    return p, q, f - ell0, steps, conv


def scan_bernoulli(xy, mflag, out_m, out_u, centers, r, rmax, fold, p0, q0,
                   max_steps, tol, enforce):
    """Solve every center in order, warm-starting each from the previous one."""
    xy = np.asarray(xy, dtype=np.float64)
    mflag = np.asarray(mflag, dtype=bool)
    centers = np.asarray(centers, dtype=np.float64)
    k = centers.shape[0]
    phi = np.empty(k)
    ps = np.empty(k)
    qs = np.empty(k)
    steps = np.empty(k, dtype=np.int32)
    npts = np.empty(k, dtype=np.int64)
    conv = np.empty(k, dtype=bool)
    r2 = r * r
    rmax2 = rmax * rmax
    for i in range(k):
        dx = xy[:, 0] - centers[i, 0]
        dy = xy[:, 1] - centers[i, 1]
        d2 = dx * dx + dy * dy
        K = np.exp(-d2 / r2)
        a, b, mf = out_m, out_u, mflag
        if math.isfinite(rmax):
            zero = d2 > rmax2
            if fold:
                keep = ~zero
                nz_m = int(np.count_nonzero(zero & mflag))
                a = out_m + nz_m
                b = out_u + int(np.count_nonzero(zero)) - nz_m
                K = K[keep]
                mf = mflag[keep]
            else:
                K[zero] = 0.0
        npts[i] = K.shape[0]
        p0, q0, phi[i], steps[i], conv[i] = solve_bernoulli(
            K, mf, a, b, p0, q0, max_steps, tol, enforce)
        ps[i], qs[i] = p0, q0
    return phi, ps, qs, steps, npts, conv


def kulldorff_bernoulli(m, b):
    """One-sided Kulldorff Bernoulli discrepancy of measured/baseline fractions."""
    if not m > b:
        return 0.0
    if b <= 0.0:
        return math.inf
    v = m * math.log(m / b)
    if m < 1.0:
        v += (1.0 - m) * math.log((1.0 - m) / (1.0 - b))
    return v


def disk_scan(xy, mflag, centers):
    """Best disk per center over all distinct radii.

    Returns ``(value, radius2, n_in_measured, n_in)`` arrays; ties between radii
    go to the smaller radius.
    """
    xy = np.asarray(xy, dtype=np.float64)
    mflag = np.asarray(mflag, dtype=bool)
    centers = np.asarray(centers, dtype=np.float64)
    n = xy.shape[0]
    mt = int(np.count_nonzero(mflag))
    k = centers.shape[0]
    value = np.zeros(k)
    radius2 = np.zeros(k)
    in_m = np.zeros(k, dtype=np.int64)
    in_b = np.zeros(k, dtype=np.int64)
    counts = np.arange(1, n + 1)
    for i in range(k):
        dx = xy[:, 0] - centers[i, 0]
        dy = xy[:, 1] - centers[i, 1]
        d2 = dx * dx + dy * dy
        order = np.argsort(d2, kind="stable")
        ds = d2[order]
        cm = np.cumsum(mflag[order])
        last = np.empty(n, dtype=bool)
        last[:-1] = ds[1:] != ds[:-1]
        last[-1] = True
        gm = cm[last]
        gb = counts[last]
        if mt == 0 or mt == n:
            j = 0
        else:
            mf = gm / mt
            bf = gb / n
            with np.errstate(divide="ignore", invalid="ignore"):
                v = mf * np.log(mf / bf)
                rest = (1.0 - mf) * np.log((1.0 - mf) / (1.0 - bf))
            v = np.where(mf < 1.0, v + rest, v)
            v = np.where(mf > bf, v, 0.0)
            j = int(np.argmax(v))
            value[i] = kulldorff_bernoulli(gm[j] / mt, gb[j] / n)
        radius2[i] = ds[last][j]
        in_m[i] = gm[j]
        in_b[i] = gb[j]
    return value, radius2, in_m, in_b
