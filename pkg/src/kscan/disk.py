"""Disk scan baseline: Kulldorff's Bernoulli statistic over disks on the fixed grid.

Each candidate center sweeps every data-determined radius.  The grid is sized
with ``ScanConfig.grid_bandwidth`` (or ``bandwidth``) exactly as KernelGrid's,
so both methods see the same center set.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels_py, backend
from .errors import DataError
from .geometry import Domain, LabeledDataset, Point
from .likelihood import RatePair
from .scanner import ScanConfig, ScanResult, best_index, fixed_centers


@dataclass(frozen=True)
class DiskRegion:
    center: Point
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def contains(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        d2 = (xy[:, 0] - self.center[0]) ** 2 + (xy[:, 1] - self.center[1]) ** 2
        return d2 <= self.radius * self.radius


def kulldorff_bernoulli(m_frac: float, b_frac: float) -> float:
    """m ln(m/b) + (1-m) ln((1-m)/(1-b)) when m > b, else 0."""
    if not (0.0 <= m_frac <= 1.0 and 0.0 <= b_frac <= 1.0):
        raise ValueError(f"fractions must lie in [0, 1], got {m_frac}, {b_frac}")
    return _kernels_py.kulldorff_bernoulli(m_frac, b_frac)


def disk_scan(data: LabeledDataset, domain: Domain, config: ScanConfig) -> ScanResult:
    """Best disk over fixed-grid centers and all radii.

    The radius is stored as ``best_bandwidth``; ``rates`` holds the measured
    fractions inside and outside the disk.
    """
    if data.model != "bernoulli":
        raise DataError("disk scan needs bernoulli data")
    t0 = time.perf_counter()
    kernels = backend.get(config.backend)
    centers = fixed_centers(domain, config)
    xy = np.ascontiguousarray(data.xy)
    mflag = data.measured_mask
    parts = []
    step = config.chunk_size
    chunks = [np.ascontiguousarray(centers[s:s + step]) for s in range(0, centers.shape[0], step)]
    if config.threads > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            parts = list(pool.map(lambda c: kernels.disk_scan(xy, mflag, c), chunks))
    else:
        parts = [kernels.disk_scan(xy, mflag, c) for c in chunks]
    value = np.concatenate([p[0] for p in parts])
    radius2 = np.concatenate([p[1] for p in parts])
    in_m = np.concatenate([p[2] for p in parts])
    in_b = np.concatenate([p[3] for p in parts])
    i = best_index(centers, value)
    n, mt = data.n, data.n_measured
    radius = math.sqrt(radius2[i])
    p_in = in_m[i] / in_b[i] if in_b[i] else 0.0
    p_out = (mt - in_m[i]) / (n - in_b[i]) if n > in_b[i] else 0.0
    region = DiskRegion(Point(float(centers[i, 0]), float(centers[i, 1])), radius) if radius > 0 else None
    return ScanResult(
        Point(float(centers[i, 0]), float(centers[i, 1])), radius, RatePair(float(p_in), float(p_out)),
        float(value[i]), int(centers.shape[0]), n * int(centers.shape[0]),
        time.perf_counter() - t0, "disk", centers, value,
        {"disk": region, "n_in": int(in_b[i]), "n_in_measured": int(in_m[i])})
