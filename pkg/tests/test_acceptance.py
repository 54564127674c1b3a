"""Acceptance criteria 1 to 10.  Each test records one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
complete; they are also gathered in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

import oracles
from kscan.experiments import (
    KSSS_ALGORITHMS,
    HarnessConfig,
    PlantSpec,
    bandwidth_sensitivity,
    medians,
    plant_anomaly,
    power_experiment,
    standard_plant,
    synth_baseline,
)
from kscan.geometry import Domain, KernelRegion, LabeledDataset, Point, truncation_radius
from kscan.likelihood import (
    RatePair,
    SolverConfig,
    alt_loglik_bernoulli,
    conservation_residual,
    eval_binary_setting_bernoulli,
    feasibility_bounds,
    grad_bernoulli,
    phi_gaussian_closed_form,
    solve_phi_bernoulli,
)
from kscan.scanner import (
    ScanConfig,
    estimate_runtime,
    kernel_adaptive_scan,
    kernel_fast_scan,
    kernel_grid_scan,
    kernel_prune_scan,
    scan,
)

pytestmark = pytest.mark.acceptance

# standard benchmark: clustered baseline, n = 10^4, f = 0.03, p = 0.8, q = 0.5, 20 trials
N_STD, TRIALS, MASTER = 10_000, 20, 0
HARNESS = HarnessConfig(epsilon=0.2, adaptive_floor=True)


@pytest.fixture(scope="module")
def standard():
    return synth_baseline("clustered", N_STD, MASTER)


def _bern_instance(rng, n_lo=20, n_hi=200):
    xy, m, c, r = oracles.random_bernoulli_instance(rng, n_lo, n_hi)
    return LabeledDataset(xy, m), KernelRegion(Point(*c), r)


def test_c01_solver_vs_bruteforce(rng, criterion):
    t0 = time.perf_counter()
    strict = SolverConfig.strict()
    worst = 0.0
    for _ in range(50):
        data, region = _bern_instance(rng)
        phi, _, _ = oracles.bernoulli_bruteforce(data.m, region.values(data.xy), step=1e-3)
        worst = max(worst, abs(solve_phi_bernoulli(data, region, strict).phi - phi))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 60
    assert criterion(1, ok, f"max |dPhi| = {worst:.2e} (<= 1e-4), {elapsed:.1f} s (< 60 s)")


def test_c02_gaussian_closed_form(rng, criterion):
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(5, 60))
        xy = rng.random((n, 2))
        region = KernelRegion(Point(*rng.random(2)), float(rng.uniform(0.1, 0.6)))
        K = region.values(xy)
        m = rng.normal(0, 2) * K + rng.normal(0, 1) + rng.normal(0, 0.5, n)
        res = phi_gaussian_closed_form(LabeledDataset(xy, m, "gaussian"), region,
                                       enforce_p_ge_q=False)
        phi, p, q = oracles.gaussian_minimize(m, K)
        worst = max(worst, abs(res.phi - phi), abs(res.rates.p - p), abs(res.rates.q - q))
    xy = rng.random((40, 2))
    region = KernelRegion(Point(0.4, 0.6), 0.3)
    K = region.values(xy)
    m = 1.7 * K - 0.4
    fit = phi_gaussian_closed_form(LabeledDataset(xy, m, "gaussian"), region)
    g = fit.rates.p * K + fit.rates.q * (1 - K)
    resid = float(((m - g) ** 2).mean())
    ok = worst <= 1e-6 and resid <= 1e-10
    assert criterion(2, ok, f"max deviation = {worst:.2e} (<= 1e-6), exact-fit residual = "
                            f"{resid:.1e} (<= 1e-10)")


def test_c03_lemma_suite(rng, criterion):
    t0 = time.perf_counter()
    fails = []
    tol = 1e-10
    strict = SolverConfig.strict(grad_tolerance=tol)

    # conservation at converged interior optima; feasibility at every iterate
    checked = 0
    for _ in range(50):
        data, region = _bern_instance(rng)
        res = solve_phi_bernoulli(data, region, strict, trace=True)
        if not all(feasibility_bounds(data, region, RatePair(p, q)) for p, q, _ in res.trace):
            fails.append("infeasible iterate")
        K = region.values(data.xy)
        p, q = res.rates.p, res.rates.q
        g = p * K + q * (1 - K)
        lo = 1.0 / data.n
        slack = min(p - q, g[data.measured_mask].min() - lo,
                    1 - lo - g[~data.measured_mask].max(), q - lo, 1 - lo - p)
        if res.converged and slack > 1e-6:
            checked += 1
            if max(conservation_residual(data, region, res.rates)) >= 10 * tol * data.n:
                fails.append("conservation")
    if checked < 10:
        fails.append(f"only {checked} interior optima")

    # truncation
    trunc_worst = 0.0
    for _ in range(20):
        data, _ = _bern_instance(rng, 50, 150)
        r, eps, c = float(rng.uniform(0.1, 0.5)), 0.1, Point(*rng.random(2))
        full = solve_phi_bernoulli(data, KernelRegion(c, r), strict).phi
        cut = solve_phi_bernoulli(data, KernelRegion(c, r, truncation_radius(r, data.n, eps)),
                                  strict).phi
        trunc_worst = max(trunc_worst, abs(full - cut) / eps)
    if trunc_worst > 1.0:
        fails.append("truncation")

    # center Lipschitz over 1000 pairs
    center_worst = 0.0
    for _ in range(10):
        data, _ = _bern_instance(rng, 50, 150)
        r = float(rng.uniform(0.15, 0.5))
        for _ in range(100):
            c = rng.random(2)
            c2 = c + rng.normal(0, 0.02, 2)
            a = solve_phi_bernoulli(data, KernelRegion(Point(*c), r), strict).phi
            b = solve_phi_bernoulli(data, KernelRegion(Point(*c2), r), strict).phi
            bound = math.sqrt(8 / math.e) / r * math.hypot(*(c - c2)) + 2 * tol
            center_worst = max(center_worst, abs(a - b) / bound)
    if center_worst > 1.0:
        fails.append("center Lipschitz")

    # bandwidth Lipschitz at fixed rates
    bw_worst = 0.0
    for _ in range(200):
        data, _ = _bern_instance(rng, 50, 150)
        c = Point(*rng.random(2))
        r = float(rng.uniform(0.05, 0.5))
        r2 = r * float(rng.uniform(0.8, 1.25))
        rt = RatePair(*rng.uniform(0.2, 0.8, 2))
        a = alt_loglik_bernoulli(data, KernelRegion(c, r), rt)
        b = alt_loglik_bernoulli(data, KernelRegion(c, r2), rt)
        bound = 4 / (math.e * min(r, r2)) * abs(r - r2) + 1e-12
        bw_worst = max(bw_worst, abs(a - b) / bound)
    if bw_worst > 1.0:
        fails.append("bandwidth Lipschitz")

    # gradient against central differences
    fd_worst = 0.0
    h = 1e-6
    for _ in range(100):
        data, region = _bern_instance(rng)
        K = region.values(data.xy)
        while True:
            p, q = rng.uniform(1.0 / data.n, 1 - 1.0 / data.n, 2)
            g = p * K + q * (1 - K)
            if feasibility_bounds(data, region, RatePair(p, q)) and 0 < g.min() < g.max() < 1:
                break
        gp, gq = grad_bernoulli(data, region, RatePair(p, q))

        def f(a, b):
            return alt_loglik_bernoulli(data, region, RatePair(a, b))

        fp = (f(p + h, q) - f(p - h, q)) / (2 * h)
        fq = (f(p, q + h) - f(p, q - h)) / (2 * h)
        scale = max(1.0, abs(gp), abs(gq))
        fd_worst = max(fd_worst, abs(gp - fp) / scale, abs(gq - fq) / scale)
    if fd_worst > 1e-5:
        fails.append("finite differences")

    elapsed = time.perf_counter() - t0
    if elapsed >= 120:
        fails.append("runtime")
    assert criterion(3, not fails,
                     f"{checked} conservation checks, truncation {trunc_worst:.2f}, center "
                     f"{center_worst:.2f}, bandwidth {bw_worst:.2f} of bound; fd rel "
                     f"{fd_worst:.1e}; {elapsed:.1f} s" + (f"; failed: {fails}" if fails else ""))


def test_c04_scan_equivalence_ladder(rng, criterion):
    eps = 0.1
    prune_worst = approx_worst = 0.0
    for _ in range(20):
        n = int(rng.integers(100, 300))
        xy = rng.random((n, 2))
        c, r = rng.random(2), float(rng.uniform(0.1, 0.3))
        K = oracles.kernel(xy, c, r)
        m = (rng.random(n) < 0.85 * K + 0.3 * (1 - K)).astype(float)
        data, dom = LabeledDataset(xy, m), Domain.from_points(xy)
        cfg = ScanConfig(epsilon=eps, bandwidth=r)
        a = kernel_prune_scan(data, dom, cfg)
        b = kernel_prune_scan(data, dom, cfg, full_sum=True)
        prune_worst = max(prune_worst, float(np.abs(a.phis - b.phis).max()))
        g = kernel_grid_scan(data, dom, cfg).phi
        for fn in (kernel_adaptive_scan, kernel_fast_scan):
            approx_worst = max(approx_worst, abs(fn(data, dom, cfg).phi - g))
    ok = prune_worst <= 1e-10 and approx_worst <= 2 * eps
    assert criterion(4, ok, f"prune vs full sum {prune_worst:.1e} (<= 1e-10), adaptive/fast vs "
                            f"grid {approx_worst:.3f} (<= {2 * eps})")


def test_c05_binary_setting_bit_identical(rng, criterion):
    same = 0
    for _ in range(100):
        data, region = _bern_instance(rng)
        K = region.values(data.xy)
        while True:
            rt = RatePair(*rng.uniform(0.01, 0.99, 2))
            g = rt.p * K + rt.q * (1 - K)
            if 0 < g.min() and g.max() < 1:
                break
        same += (eval_binary_setting_bernoulli(data, region, rt)
                 == alt_loglik_bernoulli(data, region, rt))
    assert criterion(5, same == 100, f"{same}/100 triples bit-identical")


def _scaled_distance(recs):
    return float(np.median([r.center_distance / r.ground_truth.kernel.bandwidth for r in recs]))


def test_c06_power_plateau(standard, criterion):
    t0 = time.perf_counter()
    recs = power_experiment(standard, None, KSSS_ALGORITHMS, [1000], TRIALS, HARNESS, MASTER)
    med = medians(recs)
    parts, ok = [], True
    for alg in KSSS_ALGORITHMS:
        js = med[(alg, 1000)]["jaccard"]
        d = _scaled_distance([r for r in recs if r.algorithm == alg and r.error is None])
        ok &= js >= 0.75 and d <= 0.1 and med[(alg, 1000)]["trials"] == TRIALS
        parts.append(f"{alg} JS {js:.3f} dist {d:.2f}r")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    assert criterion(6, ok, "; ".join(parts) + f" (need JS >= 0.75, dist <= 0.1r); "
                                              f"{elapsed:.0f} s")


def test_c07_speedup(criterion):
    # The plant follows the scalability setting (f = 0.01), which gives lambda > 20.
    # Wall-clock is extrapolated from a seeded sample of each scan's tasks.
    t0 = time.perf_counter()
    pts = synth_baseline("clustered", 100_000, MASTER)
    dom = Domain.from_points(pts)
    spec, _ = standard_plant(pts, 0, MASTER, f=0.01)
    r = spec.kernel.bandwidth
    lam = max(dom.width, dom.height) / r
    data = plant_anomaly(pts, spec)
    est = {}
    for alg in ("grid", "adaptive", "fast"):
        cfg = ScanConfig(epsilon=0.1, bandwidth=r, algorithm=alg, adaptive_floor=True)
        est[alg] = estimate_runtime(data, dom, cfg, sample_tasks=40, seed=0)
    g = est["grid"]["estimated_seconds"]
    fast, adaptive = g / est["fast"]["estimated_seconds"], g / est["adaptive"]["estimated_seconds"]
    elapsed = time.perf_counter() - t0
    ok = lam >= 20 and fast >= 5 and adaptive >= 2 and elapsed < 1200
    detail = ", ".join(f"{a} {e['centers']} centers ~{e['estimated_seconds']:.0f} s"
                       for a, e in est.items())
    assert criterion(7, ok, f"lambda {lam:.1f}; estimated speedups: fast {fast:.2f}x (>= 5), "
                            f"adaptive {adaptive:.2f}x (>= 2); {detail}; {elapsed:.0f} s")


def _first_size(pts, alg, sizes):
    for s in sizes:
        recs = power_experiment(pts, None, [alg], [s], TRIALS, HARNESS, MASTER)
        if medians(recs)[(alg, s)]["jaccard"] >= 0.8:
            return s
    return None


def test_c08_ksss_beats_disk(standard, criterion):
    sizes = [250, 500, 1000, 2000, 4000, N_STD]
    s_fast = _first_size(standard, "fast", sizes)
    if s_fast is None:
        assert criterion(8, False, "fast never reaches median JS 0.8")
    # disk only needs checking up to the size where fast got there
    s_disk = _first_size(standard, "disk", [s for s in sizes if s <= s_fast])
    ok = s_disk is None
    assert criterion(8, ok, f"first size with median JS >= 0.8: fast {s_fast}, disk "
                            f"{s_disk if s_disk is not None else f'> {s_fast}'}")


def test_c09_bandwidth_sensitivity(standard, criterion):
    scales = [0.01, 0.5, 1.0, 2.0]
    recs = bandwidth_sensitivity(standard, None, scales, TRIALS, "fast", None, HARNESS, MASTER)
    med = {s: m["jaccard"] for (s,), m in medians(recs, key=("scale",)).items()}
    base = med[1.0]
    ok = all(med[s] >= 0.8 * base for s in (0.5, 2.0)) and med[0.01] < 0.5 * base
    assert criterion(9, ok, ", ".join(f"s={s}: {med[s]:.3f}" for s in scales)
                     + f" (need >= {0.8 * base:.3f} at 0.5, 2 and < {0.5 * base:.3f} at 0.01)")


def test_c10_four_steps_suffice(standard, criterion):
    worst = 0.0
    for t in range(TRIALS):
        spec, _ = standard_plant(standard, t, MASTER)
        data = plant_anomaly(standard, spec)
        dom = Domain.from_points(standard)
        r = spec.kernel.bandwidth
        base = ScanConfig(epsilon=HARNESS.epsilon, bandwidth=r, algorithm="prune")
        four = scan(data, dom, base).phi
        strict = scan(data, dom, ScanConfig(epsilon=HARNESS.epsilon, bandwidth=r,
                                            algorithm="prune", solver=SolverConfig.strict())).phi
        worst = max(worst, abs(four - strict))
    assert criterion(10, worst <= 1e-3, f"max |Phi(4 steps) - Phi(strict)| = {worst:.2e} "
                                        f"(<= 1e-3) over {TRIALS} trials")
