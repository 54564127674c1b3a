"""Points, labelled datasets, Gaussian kernel regions and candidate-center grids.

Coordinates are planar Euclidean.  Longitude/latitude input is used as-is, so
project it first if distances matter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError, GridTooLargeError

MODELS = ("bernoulli", "gaussian", "poisson")
DEFAULT_MAX_CENTERS = 10**7

_SQRT_E_OVER_4 = math.sqrt(math.e / 4.0)


class Point(NamedTuple):
    x: float
    y: float


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Baseline points ``xy`` with a parallel array of measured values ``m``."""

    xy: np.ndarray
    m: np.ndarray
    model: str = "bernoulli"

    def __post_init__(self):
        xy = _frozen(self.xy)
        m = _frozen(self.m)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise DataError(f"points must have shape (n, 2), got {xy.shape}")
        if m.shape != (xy.shape[0],):
            raise DataError(f"{m.shape[0] if m.ndim == 1 else m.shape} measured values for {xy.shape[0]} points")
        if xy.shape[0] < 1:
            raise DataError("dataset needs at least one point")
        if not np.isfinite(xy).all():
            raise DataError("point coordinates must be finite")
        if not np.isfinite(m).all():
            raise DataError("measured values must be finite")
        if self.model not in MODELS:
            raise DataError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.model == "bernoulli" and not np.isin(m, (0.0, 1.0)).all():
            raise DataError("bernoulli measurements must be 0 or 1")
        if self.model == "poisson" and ((m < 0).any() or (m != np.floor(m)).any()):
            raise DataError("poisson measurements must be non-negative integers")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "m", m)

    def __len__(self):
        return self.xy.shape[0]

    @property
    def n(self) -> int:
        return self.xy.shape[0]

    @property
    def points(self) -> list[Point]:
        return [Point(float(x), float(y)) for x, y in self.xy]

    @property
    def measured_mask(self) -> np.ndarray:
        """Boolean mask of the measured subset M (Bernoulli data)."""
        return self.m == 1.0

    @property
    def n_measured(self) -> int:
        return int(np.count_nonzero(self.m == 1.0))

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.xy[index], self.m[index], self.model)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.model == other.model
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.m, other.m)
        )

    __hash__ = None


@dataclass(frozen=True)
class Domain:
    """Axis-aligned bounding box ``[x_lo, x_hi] x [y_lo, y_hi]``."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_lo <= self.x_hi and self.y_lo <= self.y_hi):
            raise ValueError(f"empty domain {self}")

    @classmethod
    def from_points(cls, xy) -> "Domain":
        xy = np.asarray(xy, dtype=np.float64)
        lo = xy.min(axis=0)
        hi = xy.max(axis=0)
        return cls(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))

    @property
    def width(self) -> float:
        return self.x_hi - self.x_lo

    @property
    def height(self) -> float:
        return self.y_hi - self.y_lo

    @property
    def side(self) -> float:
        return max(self.width, self.height)

    def lambda_ratio(self, r: float) -> float:
        """Unitless resolution: longer side over bandwidth."""
        return self.side / r

    def contains(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        return (
            (xy[:, 0] >= self.x_lo) & (xy[:, 0] <= self.x_hi)
            & (xy[:, 1] >= self.y_lo) & (xy[:, 1] <= self.y_hi)
        )


@dataclass(frozen=True)
class KernelRegion:
    """Gaussian kernel K(x) = exp(-|x - c|^2 / r^2), optionally zeroed beyond r_max."""

    center: Point
    bandwidth: float
    truncation_radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", Point(float(self.center[0]), float(self.center[1])))
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.truncation_radius is not None and not self.truncation_radius > 0:
            raise ValueError(f"truncation radius must be positive, got {self.truncation_radius}")

    def values(self, xy) -> np.ndarray:
        return kernel_values(xy, self.center, self.bandwidth, self.truncation_radius)

    def __call__(self, x) -> float:
        return kernel_eval(self, x)


def kernel_values(xy, center, r, r_max=None) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64)
    dx = xy[..., 0] - center[0]
    dy = xy[..., 1] - center[1]
    d2 = dx * dx + dy * dy
    k = np.exp(-d2 / (r * r))
    if r_max is not None:
        k[d2 > r_max * r_max] = 0.0
    return k


def kernel_eval(region: KernelRegion, x) -> float:
    return float(kernel_values(np.asarray(x, dtype=np.float64)[None, :], region.center,
                               region.bandwidth, region.truncation_radius)[0])


def truncation_radius(r: float, n: int, eps: float) -> float:
    """Radius beyond which a kernel can be zeroed at additive error ``eps``."""
    if not r > 0:
        raise ValueError(f"bandwidth must be positive, got {r}")
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    if not (0 < eps < n):
        raise ValueError(f"eps must lie in (0, n), got {eps}")
    return r * math.sqrt(math.log(n / eps))


def fixed_grid_side(r: float, eps: float) -> float:
    return eps * r * _SQRT_E_OVER_4


def _check_eps(eps):
    if not (0 < eps < 1):
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")


def _axis_count(length, step):
    if length <= 0:
        return 1
    return int(math.ceil(length / step)) + 1


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice anchored at ``origin``; the last row/column is clamped to ``end``."""

    origin: Point
    side_length: float
    counts: tuple[int, int]
    end: Point

    @property
    def size(self) -> int:
        return self.counts[0] * self.counts[1]

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.minimum(self.origin.x + self.side_length * np.arange(self.counts[0]), self.end.x)
        ys = np.minimum(self.origin.y + self.side_length * np.arange(self.counts[1]), self.end.y)
        return xs, ys

    def centers(self) -> np.ndarray:
        """All centers in row-major order (y outer, x inner)."""
        xs, ys = self.axes()
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


def build_fixed_grid(domain: Domain, r: float, eps: float,
                     max_centers: int = DEFAULT_MAX_CENTERS) -> GridSpec:
    """Lattice with side eps*r*sqrt(e/4) covering ``domain``."""
    _check_eps(eps)
    tau = fixed_grid_side(r, eps)
    nx = _axis_count(domain.width, tau)
    ny = _axis_count(domain.height, tau)
    if nx * ny > max_centers:
        raise GridTooLargeError(nx * ny, max_centers)
    return GridSpec(Point(domain.x_lo, domain.y_lo), tau, (nx, ny), Point(domain.x_hi, domain.y_hi))


class CoarseGrid:
    """Square cells of side ``side`` anchored at the domain's lower-left corner.

    Points are bucketed per cell so the 3x3 block around a cell (its window)
    can be gathered without scanning the whole dataset.
    """

    def __init__(self, domain: Domain, side: float, xy):
        self.domain = domain
        self.side = side
        self.nx = max(1, int(math.ceil(domain.width / side)))
        self.ny = max(1, int(math.ceil(domain.height / side)))
        xy = np.asarray(xy, dtype=np.float64)
        ix, iy = self.cell_of(xy)
        flat = iy * self.nx + ix
        self._order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.nx * self.ny)
        self._starts = np.concatenate([[0], np.cumsum(counts)])
        self.counts = counts.reshape(self.ny, self.nx)
        padded = np.pad(self.counts, 1)
        win = np.zeros_like(self.counts)
        for dy in range(3):
            for dx in range(3):
                win += padded[dy:dy + self.ny, dx:dx + self.nx]
        self.window_counts = win

    def cell_of(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        ix = np.floor((xy[:, 0] - self.domain.x_lo) / self.side).astype(np.int64)
        iy = np.floor((xy[:, 1] - self.domain.y_lo) / self.side).astype(np.int64)
        return np.clip(ix, 0, self.nx - 1), np.clip(iy, 0, self.ny - 1)

    def cell_box(self, ix, iy):
        x0 = self.domain.x_lo + ix * self.side
        y0 = self.domain.y_lo + iy * self.side
        return x0, y0, x0 + self.side, y0 + self.side

    def window_box(self, ix, iy):
        x0, y0, x1, y1 = self.cell_box(ix, iy)
        return x0 - self.side, y0 - self.side, x1 + self.side, y1 + self.side

    def window_indices(self, ix, iy) -> np.ndarray:
        """Indices (ascending) of points bucketed in the 3x3 block around a cell."""
        parts = []
        for jy in range(max(0, iy - 1), min(self.ny, iy + 2)):
            lo = jy * self.nx + max(0, ix - 1)
            hi = jy * self.nx + min(self.nx - 1, ix + 1)
            parts.append(self._order[self._starts[lo]:self._starts[hi + 1]])
        return np.sort(np.concatenate(parts))


@dataclass(frozen=True, eq=False)
class AdaptiveCell:
    index: tuple[int, int]
    cell: tuple[float, float, float, float]
    window: tuple[float, float, float, float]
    window_count: int
    fine_side: float
    centers: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class AdaptiveGrid:
    bandwidth: float
    r_max: float
    epsilon: float
    coarse: CoarseGrid = field(repr=False)
    cells: list[AdaptiveCell] = field(repr=False)

    @property
    def size(self) -> int:
        return int(sum(c.centers.shape[0] for c in self.cells))

    def centers(self) -> np.ndarray:
        if not self.cells:
            return np.empty((0, 2))
        return np.concatenate([c.centers for c in self.cells])


def adaptive_fine_side(eps, n_total, n_window, r, r_max):
    """Fine-grid spacing for a coarse cell whose window holds ``n_window`` points."""
    return eps * (n_total / n_window) * r * r / (2.0 * r_max)


def _cell_axis(lo, hi, step):
    width = hi - lo
    if width <= 0:
        return np.array([lo])
    k = max(1, int(math.ceil(width / step)))
    return lo + (np.arange(k) + 0.5) * (width / k)


def build_adaptive_grid(domain: Domain, data: LabeledDataset, r: float, eps: float,
                        grid_scale: float = 1.0, floor_side: float | None = None,
                        max_centers: int = DEFAULT_MAX_CENTERS) -> AdaptiveGrid:
    """Density-adaptive centers: a coarse grid of side 2*r_max refined per cell.

    Each cell's spacing follows :func:`adaptive_fine_side`, multiplied by
    ``grid_scale``, raised to ``floor_side`` when given, and capped at r_max.
    Fine centers sit at the middles of an even subdivision of the cell, so no
    center is shared between cells.  Cells whose window is empty get none.
    """
    _check_eps(eps)
    n = data.n
    r_max = truncation_radius(r, n, eps)
    coarse = CoarseGrid(domain, 2.0 * r_max, data.xy)

    plans = []
    total = 0
    for iy in range(coarse.ny):
        for ix in range(coarse.nx):
            count = int(coarse.window_counts[iy, ix])
            if count == 0:
                continue
            beta = adaptive_fine_side(eps, n, count, r, r_max) * grid_scale
            if floor_side is not None:
                beta = max(beta, floor_side)
            beta = min(beta, r_max)
            x0, y0, x1, y1 = coarse.cell_box(ix, iy)
            x1 = min(x1, domain.x_hi)
            y1 = min(y1, domain.y_hi)
            kx = 1 if x1 <= x0 else max(1, math.ceil((x1 - x0) / beta))
            ky = 1 if y1 <= y0 else max(1, math.ceil((y1 - y0) / beta))
            total += kx * ky
            plans.append((ix, iy, count, beta, (x0, y0, x1, y1)))
    if total > max_centers:
        raise GridTooLargeError(total, max_centers)

    cells = []
    for ix, iy, count, beta, (x0, y0, x1, y1) in plans:
        xs = _cell_axis(x0, x1, beta)
        ys = _cell_axis(y0, y1, beta)
        gx, gy = np.meshgrid(xs, ys)
        centers = np.column_stack([gx.ravel(), gy.ravel()])
        cells.append(AdaptiveCell((ix, iy), coarse.cell_box(ix, iy), coarse.window_box(ix, iy),
                                  count, beta, centers))
    return AdaptiveGrid(r, r_max, eps, coarse, cells)
