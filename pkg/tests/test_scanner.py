import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import oracles
from kscan.geometry import Domain, KernelRegion, LabeledDataset, Point, fixed_grid_side
from kscan.likelihood import RatePair, SolverConfig, alt_loglik_bernoulli, solve_phi_bernoulli
from kscan.scanner import (
    PrunedCellView,
    ScanConfig,
    bandwidth_ladder,
    best_index,
    coreset_size,
    estimate_runtime,
    kernel_adaptive_scan,
    kernel_fast_scan,
    kernel_grid_scan,
    kernel_prune_scan,
    sample_coreset,
    scan,
    scan_multi_bandwidth,
)
from kscan.geometry import CoarseGrid


def _planted(rng, n=150, r=0.15, p=0.9, q=0.2, side=1.0):
    xy = rng.random((n, 2)) * side
    c = rng.random(2) * side
    K = oracles.kernel(xy, c, r)
    m = (rng.random(n) < p * K + q * (1 - K)).astype(float)
    if m.sum() in (0, n):
        m[0] = 1 - m[0]
    return LabeledDataset(xy, m), Domain.from_points(xy), c


def test_config_validation():
    with pytest.raises(ValueError):
        ScanConfig(epsilon=0.0, bandwidth=1.0)
    with pytest.raises(ValueError):
        ScanConfig(epsilon=0.1, bandwidth=1.0, algorithm="quad")
    with pytest.raises(ValueError):
        ScanConfig(epsilon=0.1)
    with pytest.raises(ValueError):
        ScanConfig(epsilon=0.1, bandwidth_range=(2.0, 1.0))


def test_grid_point_mass():
    xy = np.vstack([np.zeros((200, 2)), np.full((200, 2), 10.0)])
    data = LabeledDataset(xy, [1.0] * 200 + [0.0] * 200)
    res = kernel_grid_scan(data, Domain.from_points(xy),
                           ScanConfig(epsilon=0.2, bandwidth=1.0))
    tau = fixed_grid_side(1.0, 0.2)
    assert math.hypot(*res.best_center) <= tau * math.sqrt(2) / 2 + 1e-9
    assert res.phi > 0.5
    assert res.centers_evaluated == res.centers.shape[0]


def test_grid_single_center_equals_solver(rng):
    data, _, c = _planted(rng)
    dom = Domain(0.3, 0.3, 0.6, 0.6)
    cfg = ScanConfig(epsilon=0.1, bandwidth=0.15)
    res = kernel_grid_scan(data, dom, cfg)
    assert res.centers_evaluated == 1
    q0 = data.n_measured / data.n
    one = solve_phi_bernoulli(data, KernelRegion(Point(0.3, 0.6), 0.15),
                              SolverConfig(warm_start=RatePair(min(1 - 1 / data.n, q0 + 0.1), q0)))
    assert res.phi == max(one.phi, 0.0)
    assert res.rates == one.rates


def test_grid_null_below_planted(rng):
    cfg = ScanConfig(epsilon=0.3, bandwidth=0.15)
    nulls = []
    for _ in range(10):
        xy = rng.random((300, 2))
        data = LabeledDataset(xy, (rng.random(300) < 0.4).astype(float))
        nulls.append(kernel_grid_scan(data, Domain.from_points(xy), cfg).phi)
    data, dom, _ = _planted(rng, n=300, r=0.15, p=0.95, q=0.2)
    assert kernel_grid_scan(data, dom, cfg).phi > max(nulls)
    assert max(nulls) < 0.05


def test_pruned_cell_view_partition(rng):
    xy = rng.random((400, 2)) * 4
    mflag = rng.random(400) < 0.3
    cg = CoarseGrid(Domain.from_points(xy), 0.5, xy)
    for ix in range(cg.nx):
        for iy in range(cg.ny):
            v = PrunedCellView.build(cg, ix, iy, mflag)
            assert v.window.shape[0] + v.outside_measured + v.outside_unmeasured == 400
            assert v.outside_measured == mflag.sum() - mflag[v.window].sum()


def test_prune_equals_truncated_full_sum(rng):
    for _ in range(5):
        data, dom, _ = _planted(rng, n=300, r=0.08, side=2.0)
        cfg = ScanConfig(epsilon=0.2, bandwidth=0.08)
        a = kernel_prune_scan(data, dom, cfg)
        b = kernel_prune_scan(data, dom, cfg, full_sum=True)
        assert_allclose(a.phis, b.phis, rtol=0, atol=1e-10)
        assert abs(a.phi - b.phi) <= 1e-10
        assert a.points_scanned < b.points_scanned


def test_prune_single_window_same_work(rng):
    data, dom, _ = _planted(rng, n=100, r=2.0)
    cfg = ScanConfig(epsilon=0.3, bandwidth=2.0)
    a = kernel_prune_scan(data, dom, cfg)
    g = kernel_grid_scan(data, dom, cfg)
    assert a.points_scanned == g.points_scanned
    assert abs(a.phi - g.phi) <= 0.3


def test_prune_within_eps_of_grid(rng):
    for _ in range(20):
        data, dom, _ = _planted(rng, n=120, r=0.2)
        cfg = ScanConfig(epsilon=0.2, bandwidth=0.2)
        assert abs(kernel_prune_scan(data, dom, cfg).phi - kernel_grid_scan(data, dom, cfg).phi) <= 0.2


def test_adaptive_and_fast_within_2eps_uniform(rng):
    for _ in range(5):
        data, dom, _ = _planted(rng, n=100, r=0.4)
        cfg = ScanConfig(epsilon=0.3, bandwidth=0.4)
        g = kernel_grid_scan(data, dom, cfg).phi
        assert abs(kernel_adaptive_scan(data, dom, cfg).phi - g) <= 0.6
        assert abs(kernel_fast_scan(data, dom, cfg).phi - g) <= 0.6


def test_adaptive_fewer_centers_on_clustered(rng):
    a = rng.normal([1, 1], 0.05, size=(60, 2))
    b = rng.normal([19, 19], 0.05, size=(60, 2))
    xy = np.vstack([a, b])
    m = np.r_[np.ones(40), np.zeros(80)]
    data = LabeledDataset(xy, m)
    dom = Domain(0, 20, 0, 20)
    cfg = ScanConfig(epsilon=0.4, bandwidth=0.3)
    g = kernel_grid_scan(data, dom, cfg)
    ad = kernel_adaptive_scan(data, dom, cfg)
    fa = kernel_fast_scan(data, dom, cfg)
    assert ad.centers_evaluated < g.centers_evaluated
    assert abs(ad.phi - g.phi) <= 0.8 and abs(fa.phi - g.phi) <= 0.8
    # evaluations stay near the data
    d = np.sqrt(((ad.centers[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    assert d.max() < 4 * ad.extras["r_max"] * math.sqrt(2)


def test_fast_matches_adaptive_grid(rng):
    data, dom, _ = _planted(rng, n=200, r=0.1, side=2.0)
    cfg = ScanConfig(epsilon=0.3, bandwidth=0.1)
    a = kernel_adaptive_scan(data, dom, cfg)
    f = kernel_fast_scan(data, dom, cfg)
    assert_array_equal(np.sort(a.centers, axis=0), np.sort(f.centers, axis=0))
    assert abs(a.phi - f.phi) <= 1e-9


def test_best_index_tie_break():
    c = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.5], [2.0, 2.0]])
    v = np.array([0.3, 0.5, 0.5, 0.1])
    assert best_index(c, v) == 2


@pytest.mark.parametrize("algorithm", ["grid", "prune", "adaptive", "fast", "disk"])
def test_deterministic_across_threads(rng, algorithm):
    data, dom, _ = _planted(rng, n=200, r=0.15)
    cfg = ScanConfig(epsilon=0.3, bandwidth=0.15, algorithm=algorithm, chunk_size=16)
    a = scan(data, dom, cfg)
    b = scan(data, dom, replace(cfg, threads=4))
    assert a.best_center == b.best_center and a.phi == b.phi and a.rates == b.rates
    if a.phis is not None:
        assert_array_equal(a.phis, b.phis)


def test_backend_scan_agreement(rng):
    pytest.importorskip("kscan._kernels")
    data, dom, _ = _planted(rng, n=120, r=0.15)
    for alg in ("grid", "fast"):
        cfg = ScanConfig(epsilon=0.4, bandwidth=0.15, algorithm=alg)
        a = scan(data, dom, cfg)
        b = scan(data, dom, replace(cfg, backend="python"))
        assert_allclose(a.phis, b.phis, rtol=1e-9, atol=1e-12)


def test_oracle_dominance(rng):
    for _ in range(3):
        data, dom, _ = _planted(rng, n=80, r=0.25)
        eps = 0.3
        fine = kernel_grid_scan(data, dom, ScanConfig(epsilon=eps / 4, bandwidth=0.25,
                                                      solver=SolverConfig.strict())).phi
        for alg in ("grid", "prune", "adaptive", "fast"):
            res = scan(data, dom, ScanConfig(epsilon=eps, bandwidth=0.25, algorithm=alg))
            assert res.phi <= fine + eps


def test_coreset_size_example():
    assert coreset_size(10**6, 0.1, 0.05, 10**4) == math.ceil(
        math.log(1e6) ** 2 / 0.02 * math.log(1e5))
    assert abs(coreset_size(10**6, 0.1, 0.05, 10**4) - 109_873) <= 2


def test_coreset_saturation_and_determinism(rng):
    data, _, _ = _planted(rng, n=100)
    full, sat = sample_coreset(data, 0.1, 0.05, 100, seed=3)
    assert sat and full is data
    a, _ = sample_coreset(data, 0.1, 0.05, 100, seed=3, size=50)
    b, _ = sample_coreset(data, 0.1, 0.05, 100, seed=3, size=50)
    assert a == b and a.n == 50


def test_coreset_likelihood_preserved(rng):
    n, eps, delta, kappa = 10_000, 0.2, 0.05, 10
    xy = rng.random((n, 2))
    m = (rng.random(n) < 0.3).astype(float)
    data = LabeledDataset(xy, m)
    t = coreset_size(n, eps, delta, kappa)
    assert t < n
    rates = RatePair(0.6, 0.25)
    ok = 0
    trials = 1000
    for i in range(trials):
        region = KernelRegion(Point(*rng.random(2)), 0.1)
        sample, _ = sample_coreset(data, eps, delta, kappa, seed=i)
        ok += abs(alt_loglik_bernoulli(sample, region, rates)
                  - alt_loglik_bernoulli(data, region, rates)) <= eps
    assert ok >= (1 - delta) * trials


def test_bandwidth_ladder_examples():
    assert bandwidth_ladder(2.0, 2.0, 0.1) == [2.0]
    lad = bandwidth_ladder(1.0, 1000.0, 0.5)
    ratio = 1 + 0.5 * math.e / 4
    assert_allclose(ratio, 1.339785, atol=1e-6)
    assert math.ceil(math.log(1000) / math.log(ratio)) == 24
    assert len(lad) == 25
    assert lad[-1] >= 1000 and lad[-2] < 1000
    assert_allclose(np.diff(np.log(lad)), math.log(ratio), rtol=1e-12)
    for r in np.geomspace(1, 1000, 200):
        ri = min(lad, key=lambda x: abs(math.log(r / x)))
        assert max(r / ri, ri / r) <= ratio + 1e-12


def test_multi_bandwidth(rng):
    data, dom, _ = _planted(rng, n=150, r=0.15)
    base = ScanConfig(epsilon=0.3, bandwidth=0.15)
    single = scan(data, dom, base)
    collapsed = scan(data, dom, replace(base, bandwidth=None, bandwidth_range=(0.15, 0.15)))
    assert collapsed.phi == single.phi and collapsed.best_center == single.best_center
    multi = scan_multi_bandwidth(data, dom, replace(base, bandwidth=None,
                                                    bandwidth_range=(0.05, 0.4)))
    ladder = multi.extras["ladder"]
    assert len(ladder) == len(bandwidth_ladder(0.05, 0.4, 0.3))
    assert multi.phi == max(v for _, v in ladder)
    assert multi.best_bandwidth in [r for r, _ in ladder]


def _lipschitz_instance(rng):
    xy, m, _, _ = oracles.random_bernoulli_instance(rng, 50, 150)
    return LabeledDataset(xy, m)


def test_center_lipschitz(rng):
    tol = 1e-10
    strict = SolverConfig.strict(grad_tolerance=tol)
    worst = 0.0
    for _ in range(10):
        data = _lipschitz_instance(rng)
        r = float(rng.uniform(0.15, 0.5))
        for _ in range(100):
            c = rng.random(2)
            c2 = c + rng.normal(0, 0.02, 2)
            a = solve_phi_bernoulli(data, KernelRegion(Point(*c), r), strict)
            b = solve_phi_bernoulli(data, KernelRegion(Point(*c2), r), strict)
            bound = math.sqrt(8 / math.e) / r * math.hypot(*(c - c2)) + 2 * tol
            worst = max(worst, abs(a.phi - b.phi) / bound)
    assert worst <= 1.0


def test_truncation_error(rng):
    strict = SolverConfig.strict()
    from kscan.geometry import truncation_radius
    for _ in range(20):
        data = _lipschitz_instance(rng)
        r = float(rng.uniform(0.1, 0.5))
        eps = 0.1
        c = Point(*rng.random(2))
        full = solve_phi_bernoulli(data, KernelRegion(c, r), strict).phi
        trunc = solve_phi_bernoulli(
            data, KernelRegion(c, r, truncation_radius(r, data.n, eps)), strict).phi
        assert abs(full - trunc) <= eps


def test_bandwidth_lipschitz(rng):
    for _ in range(200):
        data = _lipschitz_instance(rng)
        c = Point(*rng.random(2))
        r = float(rng.uniform(0.05, 0.5))
        r2 = r * float(rng.uniform(0.8, 1.25))
        p, q = rng.uniform(0.2, 0.8, 2)
        rt = RatePair(p, q)
        a = alt_loglik_bernoulli(data, KernelRegion(c, r), rt)
        b = alt_loglik_bernoulli(data, KernelRegion(c, r2), rt)
        assert abs(a - b) <= 4 / (math.e * min(r, r2)) * abs(r - r2) + 1e-12


def test_estimate_runtime_plan(rng):
    data, dom, _ = _planted(rng, n=200, r=0.1)
    for alg in ("grid", "prune", "adaptive", "fast"):
        cfg = ScanConfig(epsilon=0.3, bandwidth=0.1, algorithm=alg)
        res = scan(data, dom, cfg)
        full = estimate_runtime(data, dom, cfg, sample_tasks=10**6)
        assert full["exact"] and full["centers"] == res.centers_evaluated
        assert full["work"] == full["sampled_work"] == res.points_scanned
        part = estimate_runtime(data, dom, cfg, sample_tasks=2, seed=1)
        assert part["sampled_tasks"] == min(2, part["tasks"]) and part["estimated_seconds"] > 0
