"""Projected ascent for two rate parameters over a small convex polygon.

The feasible set is a list of half-planes ``a*p + b*q <= c``.  Each iteration
tries a projected Newton step and falls back to a projected gradient step
sized by the local curvature; both are accepted by Armijo backtracking.  When
a constraint the gradient pushes against is active, the Newton step is taken
along that constraint's edge instead.  The compiled kernels implement the
same iteration step for step.
"""

from __future__ import annotations

import math

ARMIJO = 1e-4
SHRINK = 0.5
MAX_BACKTRACK = 40
FEAS_TOL = 1e-12
ROUNDOFF = 4e-16
ACTIVE_TOL = 1e-12
BOX_EPS = 1e-10


def bernoulli_constraints(n, kmin_m, kmax_m, kmin_u, kmax_u, enforce):
    """Half-planes bounding (p, q) for the Bernoulli likelihood.

    ``kmin_m``/``kmax_m`` are the extreme kernel values over measured points
    (None when M is empty), likewise ``kmin_u``/``kmax_u`` for unmeasured
    ones.  g(x) is affine in K(x), so the extremes are the only binding rows.
    Both rates are also boxed into [1/n, 1 - 1/n].
    """
    lo = 1.0 / n
    rows = [(-1.0, 0.0, -lo), (1.0, 0.0, 1.0 - lo), (0.0, -1.0, -lo), (0.0, 1.0, 1.0 - lo)]
    if kmin_m is not None:
        for k in sorted({kmin_m, kmax_m}):
            rows.append((-k, -(1.0 - k), -lo))
    if kmin_u is not None:
        for k in sorted({kmin_u, kmax_u}):
            rows.append((k, 1.0 - k, 1.0 - lo))
    if enforce:
        rows.append((-1.0, 1.0, 0.0))
    return rows


def box_constraints(lo, hi, enforce):
    rows = [(-1.0, 0.0, -lo), (1.0, 0.0, hi), (0.0, -1.0, -lo), (0.0, 1.0, hi)]
    if enforce:
        rows.append((-1.0, 1.0, 0.0))
    return rows


def is_feasible(p, q, rows, tol=0.0):
    for a, b, c in rows:
        if a * p + b * q - c > tol:
            return False
    return True


def project(p, q, rows):
    """Euclidean projection of (p, q) onto the polygon defined by ``rows``."""
    if is_feasible(p, q, rows):
        return p, q
    best = None
    best_d = math.inf
    nr = len(rows)
    for i in range(nr):
        a, b, c = rows[i]
        t = (a * p + b * q - c) / (a * a + b * b)
        cp = p - t * a
        cq = q - t * b
        if is_feasible(cp, cq, rows, FEAS_TOL):
            d = (cp - p) * (cp - p) + (cq - q) * (cq - q)
            if d < best_d:
                best, best_d = (cp, cq), d
    for i in range(nr):
        ai, bi, ci = rows[i]
        for j in range(i + 1, nr):
            aj, bj, cj = rows[j]
            det = ai * bj - aj * bi
            if abs(det) < 1e-14:
                continue
            cp = (ci * bj - cj * bi) / det
            cq = (ai * cj - aj * ci) / det
            if is_feasible(cp, cq, rows, FEAS_TOL):
                d = (cp - p) * (cp - p) + (cq - q) * (cq - q)
                if d < best_d:
                    best, best_d = (cp, cq), d
    if best is None:
        raise ValueError("empty feasible set for rate parameters")
    return best


def _armijo(evaluate, rows, p, q, f, gp, gq, dp, dq, t):
    for _ in range(MAX_BACKTRACK):
        np_, nq = project(p + t * dp, q + t * dq, rows)
        gs = gp * (np_ - p) + gq * (nq - q)
        if gs > 0.0:
            res = evaluate(np_, nq)
            if res is not None and res[0] >= f + ARMIJO * gs - ROUNDOFF * abs(f):
                return (np_, nq) + tuple(res)
        t *= SHRINK
    return None


def newton_direction(rows, p, q, gp, gq, hpp, hpq, hqq):
    """Newton direction, reduced to the active edge when one is binding.

    Returns None when no ascent Newton direction exists (indefinite curvature
    or a vertex with two binding constraints).
    """
    act = None
    for a, b, c in rows:
        if a * p + b * q - c >= -ACTIVE_TOL and a * gp + b * gq > 0.0:
            if act is not None:
                return None
            act = (a, b)
    if act is None:
        det = hpp * hqq - hpq * hpq
        if hpp < 0.0 and det > 0.0:
            return -(hqq * gp - hpq * gq) / det, -(hpp * gq - hpq * gp) / det
        return None
    tp, tq = -act[1], act[0]
    gt = gp * tp + gq * tq
    ht = tp * tp * hpp + 2.0 * tp * tq * hpq + tq * tq * hqq
    if ht < 0.0 and gt != 0.0:
        s = -gt / ht
        return s * tp, s * tq
    return None


def _stationary(rows, p, q, gp, gq, tol):
    sp, sq = project(p + gp, q + gq, rows)
    return math.hypot(sp - p, sq - q) <= tol


def maximize(evaluate, rows, p, q, max_steps, tol, trace=None):
    """Maximize a concave function of (p, q) from a feasible start.

    ``evaluate(p, q)`` returns ``(f, gp, gq, hpp, hpq, hqq)`` or None outside
    the function's domain.  Returns ``(p, q, f, steps, converged)``.
    """
    res = evaluate(p, q)
    if res is None:
        raise ValueError("starting rates outside the likelihood's domain")
    f, gp, gq, hpp, hpq, hqq = res
    if trace is not None:
        trace.append((p, q, f))
    steps = 0
    converged = _stationary(rows, p, q, gp, gq, tol)
    while not converged and steps < max_steps:
        trial = None
        d = newton_direction(rows, p, q, gp, gq, hpp, hpq, hqq)
        if d is not None:
            trial = _armijo(evaluate, rows, p, q, f, gp, gq, d[0], d[1], 1.0)
        if trial is None:
            curv = -(gp * gp * hpp + 2.0 * gp * gq * hpq + gq * gq * hqq)
            t0 = (gp * gp + gq * gq) / curv if curv > 0.0 else 1.0
            trial = _armijo(evaluate, rows, p, q, f, gp, gq, gp, gq, t0)
        if trial is None:
            break
        p, q, f, gp, gq, hpp, hpq, hqq = trial
        steps += 1
        if trace is not None:
            trace.append((p, q, f))
        converged = _stationary(rows, p, q, gp, gq, tol)
    return p, q, f, steps, converged
