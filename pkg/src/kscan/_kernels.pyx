# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scan kernels.  See ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, fabs, hypot, isfinite
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()

DEF MAX_ROWS = 9
DEF ARMIJO = 1e-4
DEF SHRINK = 0.5
DEF MAX_BACKTRACK = 40
DEF FEAS_TOL = 1e-12
DEF ROUNDOFF = 4e-16
DEF ACTIVE_TOL = 1e-12


cdef struct Poly:
    int nr
    double a[MAX_ROWS]
    double b[MAX_ROWS]
    double c[MAX_ROWS]


cdef struct Model:
    const double* K
    const unsigned char* mf
    Py_ssize_t nw
    double out_m
    double out_u
    double n


cdef inline void _add_row(Poly* P, double a, double b, double c) noexcept nogil:
    P.a[P.nr] = a
    P.b[P.nr] = b
    P.c[P.nr] = c
    P.nr += 1


cdef inline bint _feasible(const Poly* P, double p, double q, double tol) noexcept nogil:
    cdef int i
    for i in range(P.nr):
        if P.a[i] * p + P.b[i] * q - P.c[i] > tol:
            return False
    return True


cdef void _project(const Poly* P, double p, double q, double* op, double* oq) noexcept nogil:
    cdef int i, j
    cdef double t, cp, cq, d, det
    cdef double best_d = 1e308
    cdef bint found = False
    if _feasible(P, p, q, 0.0):
        op[0] = p
        oq[0] = q
        return
    op[0] = p
    oq[0] = q
    for i in range(P.nr):
        t = (P.a[i] * p + P.b[i] * q - P.c[i]) / (P.a[i] * P.a[i] + P.b[i] * P.b[i])
        cp = p - t * P.a[i]
        cq = q - t * P.b[i]
        if _feasible(P, cp, cq, FEAS_TOL):
            d = (cp - p) * (cp - p) + (cq - q) * (cq - q)
            if d < best_d:
                best_d = d
                op[0] = cp
                oq[0] = cq
                found = True
    for i in range(P.nr):
        for j in range(i + 1, P.nr):
            det = P.a[i] * P.b[j] - P.a[j] * P.b[i]
            if fabs(det) < 1e-14:
                continue
            cp = (P.c[i] * P.b[j] - P.c[j] * P.b[i]) / det
            cq = (P.a[i] * P.c[j] - P.a[j] * P.c[i]) / det
            if _feasible(P, cp, cq, FEAS_TOL):
                d = (cp - p) * (cp - p) + (cq - q) * (cq - q)
                if d < best_d:
                    best_d = d
                    op[0] = cp
                    oq[0] = cq
                    found = True


cdef bint _evaluate(const Model* M, double p, double q, double* out) noexcept nogil:
    """out = (f, gp, gq, hpp, hpq, hqq); False outside the likelihood's domain."""
    cdef Py_ssize_t i
    cdef double k, k1, g, ig, ig2
    cdef double f = 0.0, gp = 0.0, gq = 0.0, hpp = 0.0, hpq = 0.0, hqq = 0.0
    cdef double a = M.out_m, b = M.out_u
    if (a > 0 and q <= 0.0) or (b > 0 and 1.0 - q <= 0.0):
        return False
    for i in range(M.nw):
        k = M.K[i]
        k1 = 1.0 - k
        if M.mf[i]:
            g = p * k + q * k1
            if g <= 0.0:
                return False
            f += log(g)
            ig = 1.0 / g
            gp += k * ig
            gq += k1 * ig
        else:
            g = (1.0 - p) * k + (1.0 - q) * k1
            if g <= 0.0:
                return False
            f += log(g)
            ig = 1.0 / g
            gp -= k * ig
            gq -= k1 * ig
        ig2 = ig * ig
        hpp -= k * k * ig2
        hpq -= k * k1 * ig2
        hqq -= k1 * k1 * ig2
    if a > 0:
        f += a * log(q)
        gq += a / q
        hqq -= a / (q * q)
    if b > 0:
        f += b * log(1.0 - q)
        gq -= b / (1.0 - q)
        hqq -= b / ((1.0 - q) * (1.0 - q))
    out[0] = f / M.n
    out[1] = gp / M.n
    out[2] = gq / M.n
    out[3] = hpp / M.n
    out[4] = hpq / M.n
    out[5] = hqq / M.n
    return True


cdef bint _armijo(const Model* M, const Poly* P, double p, double q, const double* s,
                  double dp, double dq, double t, double* np_, double* nq, double* ns) noexcept nogil:
    cdef int it
    cdef double gs
    for it in range(MAX_BACKTRACK):
        _project(P, p + t * dp, q + t * dq, np_, nq)
        gs = s[1] * (np_[0] - p) + s[2] * (nq[0] - q)
        if gs > 0.0:
            if _evaluate(M, np_[0], nq[0], ns):
                if ns[0] >= s[0] + ARMIJO * gs - ROUNDOFF * fabs(s[0]):
                    return True
        t *= SHRINK
    return False


cdef bint _newton(const Poly* P, double p, double q, const double* s,
                  double* dp, double* dq) noexcept nogil:
    """Newton direction, reduced to the active edge when one is binding."""
    cdef int i, act = -1
    cdef double det, tp, tq, gt, ht, st
    for i in range(P.nr):
        if (P.a[i] * p + P.b[i] * q - P.c[i] >= -ACTIVE_TOL
                and P.a[i] * s[1] + P.b[i] * s[2] > 0.0):
            if act >= 0:
                return False
            act = i
    if act < 0:
        det = s[3] * s[5] - s[4] * s[4]
        if s[3] < 0.0 and det > 0.0:
            dp[0] = -(s[5] * s[1] - s[4] * s[2]) / det
            dq[0] = -(s[3] * s[2] - s[4] * s[1]) / det
            return True
        return False
    tp = -P.b[act]
    tq = P.a[act]
    gt = s[1] * tp + s[2] * tq
    ht = tp * tp * s[3] + 2.0 * tp * tq * s[4] + tq * tq * s[5]
    if ht < 0.0 and gt != 0.0:
        st = -gt / ht
        dp[0] = st * tp
        dq[0] = st * tq
        return True
    return False


cdef inline bint _stationary(const Poly* P, double p, double q, const double* s, double tol) noexcept nogil:
    cdef double sp, sq
    _project(P, p + s[1], q + s[2], &sp, &sq)
    return hypot(sp - p, sq - q) <= tol


cdef void _solve(const Model* M, double p0, double q0, int max_steps, double tol,
                 bint enforce, double* out) noexcept nogil:
    """out = (p, q, phi, steps, converged)."""
    cdef Py_ssize_t i
    cdef double n = M.n
    cdef double mt = M.out_m
    cdef double kmax = 0.0, k
    cdef double kmin_m = 2.0, kmax_m = -1.0, kmin_u = 2.0, kmax_u = -1.0
    cdef double qn, ell0, lo, p, q, dp, dq, curv, t0
    cdef double s[6]
    cdef double ns[6]
    cdef double np_, nq
    cdef int steps = 0
    cdef bint conv, ok
    cdef Poly P

    for i in range(M.nw):
        k = M.K[i]
        if k > kmax:
            kmax = k
        if M.mf[i]:
            mt += 1.0
            if k < kmin_m:
                kmin_m = k
            if k > kmax_m:
                kmax_m = k
        else:
            if k < kmin_u:
                kmin_u = k
            if k > kmax_u:
                kmax_u = k
    qn = mt / n
    if mt == 0.0 or mt == n or M.nw == 0 or kmax == 0.0:
        out[0] = qn
        out[1] = qn
        out[2] = 0.0
        out[3] = 0.0
        out[4] = 1.0
        return
    ell0 = (mt * log(qn) + (n - mt) * log(1.0 - qn)) / n
    if M.out_m > 0:
        kmin_m = 0.0
        if kmax_m < 0.0:
            kmax_m = 0.0
    if M.out_u > 0:
        kmin_u = 0.0
        if kmax_u < 0.0:
            kmax_u = 0.0

    P.nr = 0
    lo = 1.0 / n
    _add_row(&P, -1.0, 0.0, -lo)
    _add_row(&P, 1.0, 0.0, 1.0 - lo)
    _add_row(&P, 0.0, -1.0, -lo)
    _add_row(&P, 0.0, 1.0, 1.0 - lo)
    if kmax_m >= 0.0:
        _add_row(&P, -kmin_m, -(1.0 - kmin_m), -lo)
        if kmax_m != kmin_m:
            _add_row(&P, -kmax_m, -(1.0 - kmax_m), -lo)
    if kmax_u >= 0.0:
        _add_row(&P, kmin_u, 1.0 - kmin_u, 1.0 - lo)
        if kmax_u != kmin_u:
            _add_row(&P, kmax_u, 1.0 - kmax_u, 1.0 - lo)
    if enforce:
        _add_row(&P, -1.0, 1.0, 0.0)

    _project(&P, p0, q0, &p, &q)
    ok = _evaluate(M, p, q, s)
    if not ok or s[0] < ell0:
        p = qn
        q = qn
        _evaluate(M, p, q, s)

    conv = _stationary(&P, p, q, s, tol)
    while not conv and steps < max_steps:
        ok = False
        if _newton(&P, p, q, s, &dp, &dq):
            ok = _armijo(M, &P, p, q, s, dp, dq, 1.0, &np_, &nq, ns)
        if not ok:
            curv = -(s[1] * s[1] * s[3] + 2.0 * s[1] * s[2] * s[4] + s[2] * s[2] * s[5])
            t0 = (s[1] * s[1] + s[2] * s[2]) / curv if curv > 0.0 else 1.0
            ok = _armijo(M, &P, p, q, s, s[1], s[2], t0, &np_, &nq, ns)
        if not ok:
            break
        p = np_
        q = nq
        for i in range(6):
            s[i] = ns[i]
        steps += 1
        conv = _stationary(&P, p, q, s, tol)

    out[0] = p
    out[1] = q
    out[2] = s[0] - ell0
    out[3] = steps
    out[4] = 1.0 if conv else 0.0


def solve_bernoulli(const double[::1] K, mflag, Py_ssize_t out_m, Py_ssize_t out_u,
                    double p0, double q0, int max_steps, double tol, bint enforce):
    cdef const unsigned char[::1] mf = np.ascontiguousarray(mflag, dtype=np.uint8)
    cdef Model M
    cdef double out[5]
    cdef unsigned char dummy = 0
    M.K = &K[0] if K.shape[0] else NULL
    M.mf = &mf[0] if mf.shape[0] else &dummy
    M.nw = K.shape[0]
    M.out_m = out_m
    M.out_u = out_u
    M.n = K.shape[0] + out_m + out_u
    with nogil:
        _solve(&M, p0, q0, max_steps, tol, enforce, out)
    return out[0], out[1], out[2], int(out[3]), bool(out[4])


def scan_bernoulli(const double[:, ::1] xy, mflag, Py_ssize_t out_m, Py_ssize_t out_u,
                   const double[:, ::1] centers, double r, double rmax, bint fold,
                   double p0, double q0, int max_steps, double tol, bint enforce):
    cdef const unsigned char[::1] mf = np.ascontiguousarray(mflag, dtype=np.uint8)
    cdef Py_ssize_t n = xy.shape[0], k = centers.shape[0], i, j, w
    cdef double[::1] phi = np.empty(k)
    cdef double[::1] ps = np.empty(k)
    cdef double[::1] qs = np.empty(k)
    cdef int[::1] steps = np.empty(k, dtype=np.int32)
    cdef long long[::1] npts = np.empty(k, dtype=np.int64)
    cdef unsigned char[::1] conv = np.empty(k, dtype=np.uint8)
    cdef double* Kbuf = <double*> malloc((n + 1) * sizeof(double))
    cdef unsigned char* Mbuf = <unsigned char*> malloc((n + 1) * sizeof(unsigned char))
    cdef double r2 = r * r, rmax2 = rmax * rmax, dx, dy, d2, cx, cy
    cdef bint truncated = isfinite(rmax)
    cdef double zm, zu
    cdef double out[5]
    cdef Model M
    if Kbuf == NULL or Mbuf == NULL:
        free(Kbuf)
        free(Mbuf)
        raise MemoryError()
    try:
        with nogil:
            for i in range(k):
                cx = centers[i, 0]
                cy = centers[i, 1]
                w = 0
                zm = 0.0
                zu = 0.0
                for j in range(n):
                    dx = xy[j, 0] - cx
                    dy = xy[j, 1] - cy
                    d2 = dx * dx + dy * dy
                    if truncated and d2 > rmax2:
                        if fold:
                            if mf[j]:
                                zm += 1.0
                            else:
                                zu += 1.0
                            continue
                        Kbuf[w] = 0.0
                    else:
                        Kbuf[w] = exp(-d2 / r2)
                    Mbuf[w] = mf[j]
                    w += 1
                M.K = Kbuf
                M.mf = Mbuf
                M.nw = w
                M.out_m = out_m + zm
                M.out_u = out_u + zu
                M.n = n + out_m + out_u
                _solve(&M, p0, q0, max_steps, tol, enforce, out)
                p0 = out[0]
                q0 = out[1]
                ps[i] = out[0]
                qs[i] = out[1]
                phi[i] = out[2]
                steps[i] = <int> out[3]
                conv[i] = <unsigned char> out[4]
                npts[i] = w
    finally:
        free(Kbuf)
        free(Mbuf)
    return (np.asarray(phi), np.asarray(ps), np.asarray(qs), np.asarray(steps),
            np.asarray(npts), np.asarray(conv).astype(bool))


cdef struct DistM:
    double d2
    Py_ssize_t idx
    unsigned char m


cdef int _cmp_dist(const void* x, const void* y) noexcept nogil:
    cdef const DistM* a = <const DistM*> x
    cdef const DistM* b = <const DistM*> y
    if a.d2 < b.d2:
        return -1
    if a.d2 > b.d2:
        return 1
    if a.idx < b.idx:
        return -1
    if a.idx > b.idx:
        return 1
    return 0


cdef inline double _kulldorff(double m, double b) noexcept nogil:
    cdef double v
    if not m > b:
        return 0.0
    v = m * log(m / b)
    if m < 1.0:
        v += (1.0 - m) * log((1.0 - m) / (1.0 - b))
    return v


def disk_scan(const double[:, ::1] xy, mflag, const double[:, ::1] centers):
    cdef const unsigned char[::1] mf = np.ascontiguousarray(mflag, dtype=np.uint8)
    cdef Py_ssize_t n = xy.shape[0], k = centers.shape[0], i, j
    cdef double[::1] value = np.zeros(k)
    cdef double[::1] radius2 = np.zeros(k)
    cdef long long[::1] in_m = np.zeros(k, dtype=np.int64)
    cdef long long[::1] in_b = np.zeros(k, dtype=np.int64)
    cdef DistM* buf = <DistM*> malloc((n + 1) * sizeof(DistM))
    cdef double dx, dy, cx, cy, v, best, mt = 0.0, nd = <double> n
    cdef long long cm, best_m, best_b
    cdef double best_r2
    if buf == NULL:
        raise MemoryError()
    for j in range(n):
        if mf[j]:
            mt += 1.0
    try:
        with nogil:
            for i in range(k):
                cx = centers[i, 0]
                cy = centers[i, 1]
                for j in range(n):
                    dx = xy[j, 0] - cx
                    dy = xy[j, 1] - cy
                    buf[j].d2 = dx * dx + dy * dy
                    buf[j].idx = j
                    buf[j].m = mf[j]
                qsort(buf, n, sizeof(DistM), _cmp_dist)
                cm = 0
                best = -1.0
                best_m = 0
                best_b = 0
                best_r2 = 0.0
                for j in range(n):
                    cm += buf[j].m
                    if j + 1 < n and buf[j + 1].d2 == buf[j].d2:
                        continue
                    if mt == 0.0 or mt == nd:
                        v = 0.0
                    else:
                        v = _kulldorff(cm / mt, (j + 1) / nd)
                    if v > best:
                        best = v
                        best_m = cm
                        best_b = j + 1
                        best_r2 = buf[j].d2
                value[i] = best
                radius2[i] = best_r2
                in_m[i] = best_m
                in_b[i] = best_b
    finally:
        free(buf)
    return np.asarray(value), np.asarray(radius2), np.asarray(in_m), np.asarray(in_b)
