"""Planted-anomaly harness: synthetic baselines, planting, recovery metrics, sweeps.

Per-trial seeds are derived from ``(master seed, trial index)`` with
``numpy.random.SeedSequence``, so sweeps do not depend on scheduling.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Domain, KernelRegion, LabeledDataset, Point, kernel_values
from .likelihood import SolverConfig
from .scanner import ScanConfig, ScanResult, sample_coreset, scan

KSSS_ALGORITHMS = ("grid", "prune", "adaptive", "fast")
UNIT_DOMAIN = Domain(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class PlantSpec:
    """Ground truth for a planted anomaly.

    When ``target_fraction`` is set the harness re-solves the bandwidth so that
    the expected anomaly size is that fraction of |B|.
    """

    kernel: KernelRegion
    p_rate: float = 0.8
    q_rate: float = 0.5
    target_fraction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.q_rate <= self.p_rate < 1.0):
            raise ValueError(f"need 0 < q <= p < 1, got p={self.p_rate}, q={self.q_rate}")
        if self.target_fraction is not None and not (0 < self.target_fraction < 1):
            raise ValueError(f"target fraction must lie in (0, 1), got {self.target_fraction}")


@dataclass(frozen=True, eq=False)
class ExperimentRecord:
    ground_truth: PlantSpec
    result: ScanResult | None
    algorithm: str
    sample_size: int
    center_distance: float
    jaccard: float
    phi_found: float
    runtime: float
    trial_seed: int
    trial: int = 0
    scale: float = 1.0
    error: str | None = None
    jaccard_scan: float = math.nan

    def metrics(self) -> dict:
        return {"distance": self.center_distance, "jaccard": self.jaccard,
                "jaccard_scan": self.jaccard_scan, "phi": self.phi_found,
                "runtime": self.runtime}


class BandwidthFit(NamedTuple):
    bandwidth: float
    fraction: float
    converged: bool


def trial_seed(master: int, trial: int) -> int:
    return int(np.random.SeedSequence([master, trial]).generate_state(1, dtype=np.uint64)[0])


def synth_baseline(kind: str, n: int, seed: int, domain: Domain = UNIT_DOMAIN,
                   n_clusters: int = 10, cluster_std: float = 0.08) -> np.ndarray:
    """Synthetic baseline points.

    ``clustered`` draws from ``n_clusters`` isotropic Gaussians with seeded
    random centers; ``cluster_std`` is relative to the domain's longer side and
    draws falling outside the domain are redrawn.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    lo = np.array([domain.x_lo, domain.y_lo])
    span = np.array([domain.width, domain.height])
    if kind == "uniform":
        return lo + rng.random((n, 2)) * span
    if kind != "clustered":
        raise ValueError(f"unknown baseline kind {kind!r}")
    mus = lo + rng.random((n_clusters, 2)) * span
    std = cluster_std * domain.side
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        k = n - filled
        lab = rng.integers(0, n_clusters, size=k)
        pts = mus[lab] + rng.normal(scale=std, size=(k, 2))
        ok = domain.contains(pts)
        good = pts[ok]
        out[filled:filled + good.shape[0]] = good
        filled += good.shape[0]
    return out


def plant_anomaly(baseline_points, spec: PlantSpec) -> LabeledDataset:
    """Each point joins the anomaly with probability K(x), then m ~ Bernoulli(p or q)."""
    xy = np.asarray(baseline_points, dtype=np.float64)
    if xy.shape[0] < 1:
        raise ValueError("baseline points must be nonempty")
    rng = np.random.default_rng(spec.seed)
    K = spec.kernel.values(xy)
    in_p = rng.random(xy.shape[0]) < K
    rate = np.where(in_p, spec.p_rate, spec.q_rate)
    m = (rng.random(xy.shape[0]) < rate).astype(np.float64)
    return LabeledDataset(xy, m, "bernoulli")


def _fraction(xy, center, r):
    return float(kernel_values(xy, center, r).mean())


def solve_bandwidth_for_fraction(baseline_points, center, f: float, tol: float = 1e-3,
                                 max_iter: int = 60) -> BandwidthFit:
    """Bisect (in log r) for the bandwidth whose mean kernel value over B is ``f``.

    Brackets are derived from the point set's extent, so scaling all
    coordinates by a power of two scales the answer exactly.
    """
    if not (0 < f < 1):
        raise ValueError(f"fraction must lie in (0, 1), got {f}")
    xy = np.asarray(baseline_points, dtype=np.float64)
    extent = float(np.max(xy.max(axis=0) - xy.min(axis=0)))
    d = np.sqrt(((xy - np.asarray(center, dtype=np.float64)) ** 2).sum(axis=1))
    extent = max(extent, float(d.max()))
    if extent == 0.0:
        return BandwidthFit(0.0, 1.0, False)
    lo, hi = extent * 2.0 ** -30, extent
    f_lo = _fraction(xy, center, lo)
    if f_lo >= f - tol:
        return BandwidthFit(lo, f_lo, abs(f_lo - f) <= tol and f_lo < 1.0)
    f_hi = _fraction(xy, center, hi)
    grow = 0
    while f_hi < f and grow < max_iter:
        hi *= 2.0
        f_hi = _fraction(xy, center, hi)
        grow += 1
    if f_hi < f - tol:
        return BandwidthFit(hi, f_hi, False)
    best = (hi, f_hi)
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        fm = _fraction(xy, center, mid)
        if abs(fm - f) < abs(best[1] - f):
            best = (mid, fm)
        if abs(fm - f) <= tol:
            return BandwidthFit(mid, fm, True)
        if fm < f:
            lo = mid
        else:
            hi = mid
    return BandwidthFit(best[0], best[1], abs(best[1] - f) <= tol)


def jaccard_values(k, k_hat) -> float:
    """Extended Jaccard similarity of two kernel-value vectors."""
    k = np.asarray(k, dtype=np.float64)
    k_hat = np.asarray(k_hat, dtype=np.float64)
    cross = float(k @ k_hat)
    den = float(k @ k) + float(k_hat @ k_hat) - cross
    if den <= 0.0:
        warnings.warn("both kernels vanish on the point set", RuntimeWarning, stacklevel=2)
        return float("nan")
    return min(1.0, cross / den)


def metric_jaccard(K: KernelRegion, K_hat: KernelRegion, baseline_points) -> float:
    """Extended Jaccard over B; 1 for identical regions and 0 otherwise if both vanish."""
    xy = np.asarray(baseline_points, dtype=np.float64)
    k1 = K.values(xy)
    k2 = K_hat.values(xy)
    if not (k1.any() or k2.any()):
        warnings.warn("both kernels vanish on the point set", RuntimeWarning, stacklevel=2)
        return 1.0 if K == K_hat else 0.0
    return jaccard_values(k1, k2)


def recovered_values(result: ScanResult, xy, bandwidth: float | None = None) -> np.ndarray:
    """Membership of B in the recovered region: a kernel, or a disk's indicator.

    ``bandwidth`` overrides the kernel's bandwidth (disks are unaffected).
    """
    if result.algorithm == "disk":
        d2 = ((xy - np.asarray(result.best_center)) ** 2).sum(axis=1)
        return (d2 <= result.best_bandwidth ** 2).astype(np.float64)
    r = result.best_bandwidth if bandwidth is None else bandwidth
    return kernel_values(xy, result.best_center, r)


@dataclass(frozen=True)
class HarnessConfig:
    """Scan settings shared by every cell of a sweep."""

    epsilon: float = 0.2
    grid_scale: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    threads: int = 1
    max_centers: int = 10**7
    adaptive_floor: bool = False

    def scan_config(self, algorithm: str, r: float, seed: int) -> ScanConfig:
        return ScanConfig(epsilon=self.epsilon, bandwidth=r, algorithm=algorithm,
                          solver=self.solver, seed=seed, grid_scale=self.grid_scale,
                          threads=self.threads, max_centers=self.max_centers,
                          adaptive_floor=self.adaptive_floor)


def standard_plant(points, trial: int, master_seed: int = 0, f: float = 0.03,
                   p: float = 0.8, q: float = 0.5) -> tuple[PlantSpec, BandwidthFit]:
    """Trial plant: center at a seeded random data point, bandwidth solved for ``f``."""
    seed = trial_seed(master_seed, trial)
    rng = np.random.default_rng(seed)
    c = points[rng.integers(0, points.shape[0])]
    fit = solve_bandwidth_for_fraction(points, c, f)
    kernel = KernelRegion(Point(float(c[0]), float(c[1])), fit.bandwidth)
    return PlantSpec(kernel, p, q, f, seed), fit


def run_trial(points, spec: PlantSpec, algorithm: str, sample_size: int | None,
              harness: HarnessConfig, r_scan: float | None = None, trial: int = 0,
              scale: float = 1.0, data: LabeledDataset | None = None,
              domain: Domain | None = None) -> ExperimentRecord:
    """Plant, subsample, scan and score one cell.  Scan errors are recorded, not raised.

    ``jaccard`` compares the planted kernel with a kernel of the planted
    bandwidth at the recovered center, for every algorithm.  ``jaccard_scan``
    uses the recovered region itself: the kernel at the scanned bandwidth, or
    a disk's indicator.
    """
    points = np.asarray(points, dtype=np.float64)
    data = data if data is not None else plant_anomaly(points, spec)
    domain = domain or Domain.from_points(points)
    r_true = spec.kernel.bandwidth
    r = r_scan if r_scan is not None else r_true
    n_sample = data.n if sample_size is None else sample_size
    t0 = time.perf_counter()
    try:
        if sample_size is None or sample_size >= data.n:
            sample = data
        else:
            sample, _ = sample_coreset(data, harness.epsilon, 0.05, 1.0, spec.seed ^ 0x5EED,
                                       size=sample_size)
        res = scan(sample, domain, harness.scan_config(algorithm, r, spec.seed))
    except Exception as exc:  # recorded in the cell
        return ExperimentRecord(spec, None, algorithm, n_sample, math.nan, math.nan, math.nan,
                                time.perf_counter() - t0, spec.seed, trial, scale,
                                f"{type(exc).__name__}: {exc}")
    runtime = time.perf_counter() - t0
    dist = math.hypot(res.best_center[0] - spec.kernel.center[0],
                      res.best_center[1] - spec.kernel.center[1])
    truth = spec.kernel.values(points)
    js = jaccard_values(truth, kernel_values(points, res.best_center, r_true))
    js_scan = jaccard_values(truth, recovered_values(res, points))
    return ExperimentRecord(spec, res, algorithm, n_sample, dist, js, res.phi, runtime,
                            spec.seed, trial, scale, jaccard_scan=js_scan)


def power_experiment(baseline_points, spec: PlantSpec | None, algorithms: Sequence[str],
                     sample_sizes: Sequence[int], trials: int,
                     harness: HarnessConfig | None = None, master_seed: int = 0,
                     f: float = 0.03) -> list[ExperimentRecord]:
    """Records per (algorithm, sample size, trial).

    With ``spec=None`` each trial plants a fresh anomaly via
    :func:`standard_plant`; otherwise ``spec`` is reused with per-trial seeds.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    harness = harness or HarnessConfig()
    points = np.asarray(baseline_points, dtype=np.float64)
    domain = Domain.from_points(points)
    records = []
    for t in range(trials):
        if spec is None:
            tspec, _ = standard_plant(points, t, master_seed, f)
        else:
            tspec = replace(spec, seed=trial_seed(spec.seed, t))
        data = plant_anomaly(points, tspec)
        for size in sample_sizes:
            for alg in algorithms:
                records.append(run_trial(points, tspec, alg, size, harness, trial=t,
                                         data=data, domain=domain))
    return records


def bandwidth_sensitivity(baseline_points, spec: PlantSpec | None, scale_grid: Sequence[float],
                          trials: int = 20, algorithm: str = "fast",
                          sample_size: int | None = None,
                          harness: HarnessConfig | None = None, master_seed: int = 0,
                          f: float = 0.03) -> list[ExperimentRecord]:
    """Scan with the assumed bandwidth r * s for each scale s."""
    if any(not s > 0 for s in scale_grid):
        raise ValueError("scales must be positive")
    harness = harness or HarnessConfig()
    points = np.asarray(baseline_points, dtype=np.float64)
    domain = Domain.from_points(points)
    records = []
    for t in range(trials):
        if spec is None:
            tspec, _ = standard_plant(points, t, master_seed, f)
        else:
            tspec = replace(spec, seed=trial_seed(spec.seed, t))
        data = plant_anomaly(points, tspec)
        for s in scale_grid:
            records.append(run_trial(points, tspec, algorithm, sample_size, harness,
                                     r_scan=tspec.kernel.bandwidth * s, trial=t, scale=s,
                                     data=data, domain=domain))
    return records


def null_threshold(baseline_points, algorithm: str, sample_size: int | None, r: float,
                   plants: int = 100, q: float = 0.5, percentile: float = 95.0,
                   harness: HarnessConfig | None = None, master_seed: int = 0) -> float:
    """95th-percentile Phi over null plants (m iid Bernoulli(q), no anomaly)."""
    harness = harness or HarnessConfig()
    points = np.asarray(baseline_points, dtype=np.float64)
    domain = Domain.from_points(points)
    phis = []
    for t in range(plants):
        seed = trial_seed(master_seed, t)
        rng = np.random.default_rng(seed)
        m = (rng.random(points.shape[0]) < q).astype(np.float64)
        data = LabeledDataset(points, m)
        if sample_size is not None and sample_size < data.n:
            data, _ = sample_coreset(data, harness.epsilon, 0.05, 1.0, seed, size=sample_size)
        phis.append(scan(data, domain, harness.scan_config(algorithm, r, seed)).phi)
    return float(np.percentile(phis, percentile))


def medians(records: Sequence[ExperimentRecord], key=("algorithm", "sample_size")) -> dict:
    """Median of each metric per group; failed cells are skipped."""
    groups: dict = {}
    for rec in records:
        if rec.error is not None:
            continue
        groups.setdefault(tuple(getattr(rec, k) for k in key), []).append(rec)
    out = {}
    for k, recs in groups.items():
        out[k] = {name: float(np.median([r.metrics()[name] for r in recs]))
                  for name in ("distance", "jaccard", "jaccard_scan", "phi", "runtime")}
        out[k]["trials"] = len(recs)
    return out
