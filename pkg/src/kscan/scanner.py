"""Scanning over candidate centers: KernelGrid, pruning, adaptive gridding, KernelFast.

Every scan is split into tasks.  A task is a run of centers sharing one point
set (all of B, or one coarse cell's window plus outside counts); within a task
each center warm-starts from the previous one, and a task's first center starts
from the null rate.  Tasks run in a thread pool and are reduced in their
submission order, so the result does not depend on ``threads``.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .geometry import (
    DEFAULT_MAX_CENTERS,
    CoarseGrid,
    Domain,
    LabeledDataset,
    Point,
    build_adaptive_grid,
    build_fixed_grid,
    fixed_grid_side,
    truncation_radius,
)
from .likelihood import (
    RatePair,
    SolverConfig,
    bernoulli_start,
    null_mle_bernoulli,
    null_mle_gaussian,
    null_mle_poisson,
)
from . import _rates

ALGORITHMS = ("grid", "prune", "adaptive", "fast", "disk")
CHUNK_SIZE = 256


@dataclass(frozen=True)
class ScanConfig:
    """Settings for one scan.

    ``grid_bandwidth`` sizes the candidate grid when it should differ from the
    kernel bandwidth (the multi-bandwidth scan and the disk baseline use it).
    """

    epsilon: float = 0.1
    bandwidth: float | None = None
    algorithm: str = "grid"
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    coreset_size: int | None = None
    bandwidth_range: tuple[float, float] | None = None
    grid_scale: float = 1.0
    threads: int = 1
    max_centers: int = DEFAULT_MAX_CENTERS
    grid_bandwidth: float | None = None
    delta: float = 0.05
    sigma: float = 1.0
    rate_cap: float | None = None
    chunk_size: int = CHUNK_SIZE
    backend: str | None = None
    adaptive_floor: bool = False

    def __post_init__(self):
        if not (0 < self.epsilon < 1):
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.bandwidth_range is not None:
            lo, hi = self.bandwidth_range
            if not (0 < lo <= hi):
                raise ValueError(f"bandwidth range needs 0 < lo <= hi, got {self.bandwidth_range}")
        if self.bandwidth is None and self.bandwidth_range is None:
            raise ValueError("either bandwidth or bandwidth_range is required")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if not self.grid_scale > 0:
            raise ValueError(f"grid_scale must be positive, got {self.grid_scale}")
        if not (0 < self.delta < 1):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.coreset_size is not None and self.coreset_size < 1:
            raise ValueError(f"coreset_size must be >= 1, got {self.coreset_size}")


@dataclass(frozen=True, eq=False)
class ScanResult:
    best_center: Point
    best_bandwidth: float
    rates: RatePair
    phi: float
    centers_evaluated: int
    points_scanned: int
    elapsed: float
    algorithm: str
    centers: np.ndarray | None = field(default=None, repr=False)
    phis: np.ndarray | None = field(default=None, repr=False)
    extras: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True, eq=False)
class PrunedCellView:
    """A coarse cell's window points and the counts of everything outside it."""

    window: np.ndarray
    outside_measured: int
    outside_unmeasured: int

    @classmethod
    def build(cls, coarse: CoarseGrid, ix: int, iy: int, mflag: np.ndarray) -> "PrunedCellView":
        idx = coarse.window_indices(ix, iy)
        total_m = int(np.count_nonzero(mflag))
        in_m = int(np.count_nonzero(mflag[idx]))
        out_m = total_m - in_m
        out_u = (mflag.shape[0] - total_m) - (idx.shape[0] - in_m)
        return cls(idx, out_m, out_u)


@dataclass(frozen=True, eq=False)
class _Task:
    centers: np.ndarray
    index: np.ndarray | None  # None means every point
    out_m: int
    out_u: int
    rmax: float
    fold: bool


# Per-model kernels of a task.  Each returns (phi, p, q, work) arrays.

def _run_bernoulli(data, task, r, solver, kernels, start):
    xy = data.xy if task.index is None else data.xy[task.index]
    mflag = data.measured_mask if task.index is None else data.measured_mask[task.index]
    phi, p, q, _, _, _ = kernels.scan_bernoulli(
        np.ascontiguousarray(xy), mflag, task.out_m, task.out_u,
        np.ascontiguousarray(task.centers), r, task.rmax, task.fold,
        start.p, start.q, solver.max_steps, solver.grad_tolerance, solver.enforce_p_ge_q)
    return phi, p, q, xy.shape[0] * task.centers.shape[0]


def _window_kernel(data, task, center, r):
    xy = data.xy if task.index is None else data.xy[task.index]
    m = data.m if task.index is None else data.m[task.index]
    d2 = ((xy - center) ** 2).sum(axis=1)
    K = np.exp(-d2 / (r * r))
    if math.isfinite(task.rmax):
        K[d2 > task.rmax * task.rmax] = 0.0
    return K, m


def _outside(data, task):
    if task.index is None:
        return 0, 0.0, 0.0
    keep = np.ones(data.n, dtype=bool)
    keep[task.index] = False
    mo = data.m[keep]
    return int(mo.shape[0]), float(mo.sum()), float(mo @ mo)


def _run_gaussian(data, task, r, solver, sigma):
    n = data.n
    mbar, ell0 = null_mle_gaussian(data, sigma)
    ss0 = -ell0 * 2.0 * sigma * sigma * n
    no, so, sqo = _outside(data, task)
    k = task.centers.shape[0]
    phi, ps, qs = np.zeros(k), np.full(k, mbar), np.full(k, mbar)
    for i in range(k):
        K, m = _window_kernel(data, task, task.centers[i], r)
        K1 = 1.0 - K
        km, k2, kpm = float(K @ m), float(K @ K), float(K @ K1)
        knm = float(K1 @ m) + so
        kn2 = float(K1 @ K1) + no
        den = kpm * kpm - k2 * kn2
        if abs(den) <= 1e-12 * k2 * kn2 or k2 == 0.0 or kn2 == 0.0:
            continue
        p = (kpm * knm - km * kn2) / den
        q = (km * kpm - k2 * knm) / den
        if solver.enforce_p_ge_q and p < q:
            continue
        d1 = m - p * K - q * K1
        ss1 = float(d1 @ d1) + sqo - 2.0 * q * so + q * q * no
        phi[i] = max(0.0, (ss0 - ss1) / (2.0 * sigma * sigma * n))
        ps[i], qs[i] = p, q
    return phi, ps, qs, _work(data, task)


def _poisson_evaluator(K, m, n, out_n, out_sum):
    K1 = 1.0 - K
    pos = m > 0
    Kp, K1p, mp = K[pos], K1[pos], m[pos]
    sK, sK1 = float(K.sum()), float(K1.sum()) + out_n

    def evaluate(p, q):
        g = p * Kp + q * K1p
        if (g <= 0.0).any() or (out_sum > 0 and q <= 0.0):
            return None
        rr = mp / g
        r2 = rr / g
        f = -(p * sK + q * sK1) + float(mp @ np.log(g))
        gq = float(K1p @ rr) - sK1
        hqq = -float((K1p * K1p) @ r2)
        if out_sum > 0:
            f += out_sum * math.log(q)
            gq += out_sum / q
            hqq -= out_sum / (q * q)
        return (f / n, (float(Kp @ rr) - sK) / n, gq / n,
                -float((Kp * Kp) @ r2) / n, -float((Kp * K1p) @ r2) / n, hqq / n)

    return evaluate


def _run_poisson(data, task, r, solver, rate_cap):
    n = data.n
    q0, ell0 = null_mle_poisson(data)
    cap = rate_cap if rate_cap is not None else max(1.0, 2.0 * float(data.m.max()))
    rows = _rates.box_constraints(_rates.BOX_EPS * cap, cap, solver.enforce_p_ge_q)
    no, so, _ = _outside(data, task)
    k = task.centers.shape[0]
    phi, ps, qs = np.zeros(k), np.full(k, q0), np.full(k, q0)
    p, q = min(cap, 2.0 * q0), q0
    for i in range(k):
        K, m = _window_kernel(data, task, task.centers[i], r)
        if q0 == 0.0 or K.max() == 0.0:
            continue
        evaluate = _poisson_evaluator(K, m, n, no, so)
        p, q = _rates.project(p, q, rows)
        res = evaluate(p, q)
        if res is None or res[0] < ell0:
            p, q = _rates.project(q0, q0, rows)
        p, q, f, _, _ = _rates.maximize(evaluate, rows, p, q, solver.max_steps,
                                        solver.grad_tolerance)
        phi[i], ps[i], qs[i] = max(0.0, f - ell0), p, q
    return phi, ps, qs, _work(data, task)


def _work(data, task):
    npts = data.n if task.index is None else task.index.shape[0]
    return npts * task.centers.shape[0]


def _run_task(data, task, r, config, kernels):
    if data.model == "bernoulli":
        q0, _ = null_mle_bernoulli(data)
        start = config.solver.warm_start or bernoulli_start(q0, data.n)
        return _run_bernoulli(data, task, r, config.solver, kernels, start)
    if data.model == "gaussian":
        return _run_gaussian(data, task, r, config.solver, config.sigma)
    return _run_poisson(data, task, r, config.solver, config.rate_cap)


def _chunks(centers, chunk_size):
    for s in range(0, centers.shape[0], chunk_size):
        yield centers[s:s + chunk_size]


def run_tasks(data: LabeledDataset, tasks: list[_Task], r: float, config: ScanConfig):
    """Evaluate every task; returns (centers, phi, p, q, work) in task order."""
    kernels = backend.get(config.backend)
    if config.threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outs = list(pool.map(lambda t: _run_task(data, t, r, config, kernels), tasks))
    else:
        outs = [_run_task(data, t, r, config, kernels) for t in tasks]
    if not tasks:
        e = np.empty(0)
        return np.empty((0, 2)), e, e, e, 0
    centers = np.concatenate([t.centers for t in tasks])
    phi = np.concatenate([o[0] for o in outs])
    p = np.concatenate([o[1] for o in outs])
    q = np.concatenate([o[2] for o in outs])
    work = int(sum(o[3] for o in outs))
    return centers, phi, p, q, work


def best_index(centers: np.ndarray, values: np.ndarray) -> int:
    """Argmax with ties going to the lexicographically smallest (x, y) center."""
    top = values.max()
    cand = np.flatnonzero(values == top)
    if cand.shape[0] == 1:
        return int(cand[0])
    order = np.lexsort((centers[cand, 1], centers[cand, 0]))
    return int(cand[order[0]])


def _result(algorithm, data, r, centers, phi, p, q, work, t0, **extras) -> ScanResult:
    if centers.shape[0] == 0:
        q0 = float(data.m.mean())
        return ScanResult(Point(math.nan, math.nan), r, RatePair(q0, q0), 0.0, 0, 0,
                          time.perf_counter() - t0, algorithm, centers, phi, extras)
    i = best_index(centers, phi)
    return ScanResult(
        Point(float(centers[i, 0]), float(centers[i, 1])), r, RatePair(float(p[i]), float(q[i])),
        max(0.0, float(phi[i])), int(centers.shape[0]), work, time.perf_counter() - t0,
        algorithm, centers, phi, extras)


def _bandwidth(config):
    if config.bandwidth is None:
        raise ValueError("a single-bandwidth scan needs config.bandwidth")
    return config.bandwidth


def _grid_r(config):
    return config.grid_bandwidth if config.grid_bandwidth is not None else _bandwidth(config)


def fixed_centers(domain: Domain, config: ScanConfig) -> np.ndarray:
    return build_fixed_grid(domain, _grid_r(config), config.epsilon, config.max_centers).centers()


def plan_tasks(data: LabeledDataset, domain: Domain, config: ScanConfig,
               full_sum: bool = False) -> tuple[list[_Task], dict]:
    """Chunked tasks of a KSSS scan in evaluation order, plus the result extras.

    ``full_sum`` applies to prune only: the same centers evaluated over all of B.
    """
    r = _bandwidth(config)
    alg = config.algorithm
    if alg == "grid":
        centers = fixed_centers(domain, config)
        return [_Task(c, None, 0, 0, math.inf, False)
                for c in _chunks(centers, config.chunk_size)], {}
    if alg == "prune":
        rmax = truncation_radius(r, data.n, config.epsilon)
        coarse = CoarseGrid(domain, 2.0 * rmax, data.xy)
        groups = list(_cell_runs(coarse, fixed_centers(domain, config)))
        return (_pruned_tasks(data, coarse, groups, rmax, config.chunk_size, full_sum),
                {"r_max": rmax})
    if alg not in ("adaptive", "fast"):
        raise ValueError(f"no task plan for algorithm {alg!r}")
    grid = adaptive_grid_for(data, domain, config)
    extras = {"r_max": grid.r_max, "grid_size": grid.size}
    if alg == "adaptive":
        return [_Task(c, None, 0, 0, grid.r_max, False)
                for cell in grid.cells for c in _chunks(cell.centers, config.chunk_size)], extras
    groups = [(cell.index[0], cell.index[1], cell.centers) for cell in grid.cells]
    return _pruned_tasks(data, grid.coarse, groups, grid.r_max, config.chunk_size, False), extras


def _planned_scan(data, domain, config, full_sum=False):
    t0 = time.perf_counter()
    r = _bandwidth(config)
    tasks, extras = plan_tasks(data, domain, config, full_sum)
    out = run_tasks(data, tasks, r, config)
    return _result(config.algorithm, data, r, *out, t0, **extras)


def kernel_grid_scan(data: LabeledDataset, domain: Domain, config: ScanConfig) -> ScanResult:
    """Exact kernels at every fixed-grid center, row-major."""
    return _planned_scan(data, domain, replace(config, algorithm="grid"))


def _cell_runs(coarse: CoarseGrid, centers: np.ndarray):
    """Group centers by coarse cell; cells row-major, centers keep their order."""
    ix, iy = coarse.cell_of(centers)
    flat = iy * coarse.nx + ix
    order = np.argsort(flat, kind="stable")
    flat_sorted = flat[order]
    bounds = np.flatnonzero(np.diff(flat_sorted)) + 1
    for part in np.split(order, bounds):
        if part.shape[0]:
            f = int(flat[part[0]])
            yield f % coarse.nx, f // coarse.nx, centers[part]


def _pruned_tasks(data, coarse, groups, rmax, chunk_size, full_sum):
    mflag = data.measured_mask
    tasks = []
    for ix, iy, cs in groups:
        if full_sum:
            view = None
        else:
            view = PrunedCellView.build(coarse, ix, iy, mflag)
        for c in _chunks(cs, chunk_size):
            if view is None:
                tasks.append(_Task(c, None, 0, 0, rmax, False))
            else:
                tasks.append(_Task(c, view.window, view.outside_measured, view.outside_unmeasured,
                                   rmax, True))
    return tasks


def kernel_prune_scan(data: LabeledDataset, domain: Domain, config: ScanConfig,
                      full_sum: bool = False) -> ScanResult:
    """Fixed-grid centers with truncated kernels evaluated over each cell's window.

    Points outside a center's window only enter through their counts.  With
    ``full_sum=True`` the same centers, order and chunks are evaluated over all
    of B instead; the two agree up to summation order.
    """
    return _planned_scan(data, domain, replace(config, algorithm="prune"), full_sum)


def adaptive_grid_for(data: LabeledDataset, domain: Domain, config: ScanConfig):
    """The adaptive grid, built at half the requested error.

    With ``adaptive_floor`` no cell is refined below the fixed-grid spacing for
    that error, which the plain center-Lipschitz bound already certifies.
    """
    r = _bandwidth(config)
    eps = config.epsilon / 2.0
    floor = fixed_grid_side(r, eps) if config.adaptive_floor else None
    return build_adaptive_grid(domain, data, r, eps, config.grid_scale, floor_side=floor,
                               max_centers=config.max_centers)


def kernel_adaptive_scan(data: LabeledDataset, domain: Domain, config: ScanConfig) -> ScanResult:
    """Density-adaptive centers, truncated kernels summed over all of B."""
    return _planned_scan(data, domain, replace(config, algorithm="adaptive"))


def kernel_fast_scan(data: LabeledDataset, domain: Domain, config: ScanConfig) -> ScanResult:
    """Adaptive centers with each cell's likelihood restricted to its window."""
    return _planned_scan(data, domain, replace(config, algorithm="fast"))


def estimate_runtime(data: LabeledDataset, domain: Domain, config: ScanConfig,
                     sample_tasks: int, seed: int = 0) -> dict:
    """Wall-clock estimate of a scan from a random subset of its tasks.

    Planning is timed in full.  Task time is extrapolated by work (points times
    centers): the sampled seconds per unit of work times the scan's total work.
    Runs the whole scan when it has at most ``sample_tasks`` tasks.
    """
    t0 = time.perf_counter()
    tasks, _ = plan_tasks(data, domain, config)
    plan = time.perf_counter() - t0
    n_tasks = len(tasks)
    rng = np.random.default_rng(seed)
    pick = (np.arange(n_tasks) if n_tasks <= sample_tasks
            else np.sort(rng.choice(n_tasks, size=sample_tasks, replace=False)))
    sub = [tasks[i] for i in pick]
    t1 = time.perf_counter()
    *_, sub_work = run_tasks(data, sub, _bandwidth(config), replace(config, threads=1))
    sampled = time.perf_counter() - t1
    work = sum(_work(data, t) for t in tasks)
    est = plan + (sampled * work / sub_work if sub_work else 0.0)
    return {"algorithm": config.algorithm, "plan_seconds": plan, "tasks": n_tasks,
            "sampled_tasks": len(sub), "sampled_seconds": sampled,
            "centers": sum(t.centers.shape[0] for t in tasks), "work": work,
            "sampled_work": sub_work, "estimated_seconds": est, "exact": len(sub) == n_tasks}


def coreset_size(n: int, eps: float, delta: float, kappa: float) -> int:
    """Sample size t = ceil(ln^2(n) / (2 eps^2) * ln(kappa / (2 delta)))."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    return int(math.ceil(math.log(n) ** 2 / (2.0 * eps * eps) * math.log(kappa / (2.0 * delta))))


def sample_coreset(data: LabeledDataset, eps: float, delta: float, kappa: float, seed: int,
                   size: int | None = None) -> tuple[LabeledDataset, bool]:
    """IID uniform sample with replacement.

    Returns ``(sample, saturated)``; when the required size reaches |B| the
    full dataset is returned with ``saturated=True``.
    """
    t = size if size is not None else coreset_size(data.n, eps, delta, kappa)
    if t >= data.n and size is None:
        return data, True
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.n, size=t)
    return data.subset(idx), False


def bandwidth_ladder(r_min: float, r_max: float, eps: float) -> list[float]:
    """Geometric bandwidths with ratio 1 + eps*e/4 from r_min up to at least r_max."""
    if not (0 < r_min <= r_max):
        raise ValueError(f"need 0 < r_min <= r_max, got {r_min}, {r_max}")
    if not (0 < eps < 1):
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if r_min == r_max:
        return [r_min]
    ratio = 1.0 + eps * math.e / 4.0
    s = int(math.ceil(math.log(r_max / r_min) / math.log(ratio)))
    return [r_min * ratio ** i for i in range(s + 1)]


_SCANS = {
    "grid": kernel_grid_scan,
    "prune": kernel_prune_scan,
    "adaptive": kernel_adaptive_scan,
    "fast": kernel_fast_scan,
}


def _single(data, domain, config):
    if config.algorithm == "disk":
        from .disk import disk_scan
        return disk_scan(data, domain, config)
    return _SCANS[config.algorithm](data, domain, config)


def scan_multi_bandwidth(data: LabeledDataset, domain: Domain, config: ScanConfig) -> ScanResult:
    """Scan every ladder bandwidth and keep the best; ties go to the smaller bandwidth."""
    t0 = time.perf_counter()
    lo, hi = config.bandwidth_range
    ladder = bandwidth_ladder(lo, hi, config.epsilon)
    best = None
    per = []
    centers = work = 0
    for r in ladder:
        res = _single(data, domain, replace(config, bandwidth=r, bandwidth_range=None))
        per.append((r, res.phi))
        centers += res.centers_evaluated
        work += res.points_scanned
        if best is None or res.phi > best.phi:
            best = res
    return ScanResult(best.best_center, best.best_bandwidth, best.rates, best.phi, centers, work,
                      time.perf_counter() - t0, best.algorithm,
                      extras={"ladder": per, **best.extras})


def planned_centers(data: LabeledDataset, domain: Domain, config: ScanConfig) -> int:
    """Number of centers a single-bandwidth scan would evaluate (coreset kappa)."""
    if config.algorithm in ("adaptive", "fast"):
        return adaptive_grid_for(data, domain, config).size
    g = build_fixed_grid(domain, _grid_r(config), config.epsilon, config.max_centers)
    return g.size


def scan(data: LabeledDataset, domain: Domain | None = None,
         config: ScanConfig | None = None) -> ScanResult:
    """Run the configured scan, optionally on a coreset and over a bandwidth range."""
    if config is None:
        raise ValueError("scan needs a ScanConfig")
    domain = domain or Domain.from_points(data.xy)
    extras = {}
    if config.coreset_size is not None:
        data, saturated = sample_coreset(data, config.epsilon, config.delta, 1.0, config.seed,
                                         size=config.coreset_size)
        extras["coreset_size"] = data.n
    if config.bandwidth_range is not None and config.bandwidth is None:
        res = scan_multi_bandwidth(data, domain, config)
    else:
        res = _single(data, domain, config)
    if extras:
        res.extras.update(extras)
    return res


__all__ = [
    "ALGORITHMS", "ScanConfig", "ScanResult", "PrunedCellView", "kernel_grid_scan",
    "kernel_prune_scan", "kernel_adaptive_scan", "kernel_fast_scan", "scan_multi_bandwidth",
    "sample_coreset", "coreset_size", "bandwidth_ladder", "best_index", "scan",
    "planned_centers", "plan_tasks", "estimate_runtime", "fixed_grid_side", "run_tasks", "adaptive_grid_for", "fixed_centers",
]
