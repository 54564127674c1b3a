"""Kernel spatial scan statistics."""

__version__ = "0.1.0"

from .errors import DataError, GridTooLargeError, KscanError
from .geometry import (
    AdaptiveGrid,
    Domain,
    GridSpec,
    KernelRegion,
    LabeledDataset,
    Point,
    build_adaptive_grid,
    build_fixed_grid,
    kernel_eval,
    truncation_radius,
)
from .likelihood import (
    DiscrepancyResult,
    ModelParams,
    RatePair,
    SolverConfig,
    phi_gaussian_closed_form,
    solve_phi_bernoulli,
    solve_phi_poisson,
)
from .scanner import (
    ScanConfig,
    ScanResult,
    bandwidth_ladder,
    kernel_adaptive_scan,
    kernel_fast_scan,
    kernel_grid_scan,
    kernel_prune_scan,
    sample_coreset,
    scan,
    scan_multi_bandwidth,
)
from .disk import DiskRegion, disk_scan, kulldorff_bernoulli

__all__ = [
    "__version__", "DataError", "GridTooLargeError", "KscanError", "AdaptiveGrid", "Domain",
    "GridSpec", "KernelRegion", "LabeledDataset", "Point", "build_adaptive_grid",
    "build_fixed_grid", "kernel_eval", "truncation_radius", "DiscrepancyResult", "ModelParams",
    "RatePair", "SolverConfig", "phi_gaussian_closed_form", "solve_phi_bernoulli",
    "solve_phi_poisson", "ScanConfig", "ScanResult", "bandwidth_ladder", "kernel_adaptive_scan",
    "kernel_fast_scan", "kernel_grid_scan", "kernel_prune_scan", "sample_coreset", "scan",
    "scan_multi_bandwidth", "DiskRegion", "disk_scan", "kulldorff_bernoulli",
]
