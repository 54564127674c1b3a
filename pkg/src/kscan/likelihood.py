"""Discrepancy functions for the Bernoulli, Gaussian and Poisson models.

All log-likelihoods are per-point averages (divided by |B|), so the reported
discrepancy Phi is scale-free across dataset sizes.  The ``ln m!`` terms of the
Poisson model and the ``ln(sigma sqrt(2 pi))`` terms of the Gaussian model
cancel in the ratio and are omitted throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels_py, _rates, backend
from .errors import DataError
from .geometry import KernelRegion, LabeledDataset


@dataclass(frozen=True)
class RatePair:
    p: float
    q: float

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise ValueError(f"rates must be finite, got {self}")


@dataclass(frozen=True)
class ModelParams:
    model: str = "bernoulli"
    sigma: float = 1.0

    def __post_init__(self):
        if self.model not in ("bernoulli", "gaussian", "poisson"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "gaussian" and not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class SolverConfig:
    """Rate-solver settings.  ``grad_tolerance`` applies to the projected gradient."""

    max_steps: int = 4
    grad_tolerance: float = 1e-8
    warm_start: RatePair | None = None
    enforce_p_ge_q: bool = True

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if not self.grad_tolerance >= 0:
            raise ValueError(f"grad_tolerance must be >= 0, got {self.grad_tolerance}")

    @classmethod
    def strict(cls, **kw) -> "SolverConfig":
        """Iterate (up to a generous cap) until the gradient tolerance is met."""
        kw.setdefault("max_steps", STRICT_MAX_STEPS)
        return cls(**kw)


STRICT_MAX_STEPS = 500


@dataclass(frozen=True)
class DiscrepancyResult:
    phi: float
    rates: RatePair
    steps_used: int
    conservation_residual: float
    converged: bool = True
    singular: bool = False
    trace: list | None = field(default=None, repr=False, compare=False)


def _kernel(data: LabeledDataset, region: KernelRegion) -> np.ndarray:
    return region.values(data.xy)


def _require(data, model):
    if data.model != model:
        raise DataError(f"expected {model} data, got {data.model}")


def _mlog(m, x):
    """m * ln(x) with 0 * ln(0) = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(m > 0, m * np.log(x), 0.0)


# Bernoulli

def null_mle_bernoulli(data: LabeledDataset) -> tuple[float, float]:
    _require(data, "bernoulli")
    return _kernels_py.bernoulli_null(data.n_measured, data.n)


def bernoulli_terms(m, K, p, q) -> np.ndarray:
    """Per-point continuous-setting log-likelihood terms."""
    g = p * K + q * (1.0 - K)
    if ((g <= 0.0) | (g >= 1.0)).any():
        raise ValueError("rates put g(x) on the boundary {0, 1}")
    return np.log(np.where(m == 1.0, g, 1.0 - g))


def bernoulli_binary_terms(m, K, p, q) -> np.ndarray:
    """Per-point binary-setting terms: each point is in the anomaly with probability K.

    The mixture of Bernoulli(p) and Bernoulli(q) with weight K puts mass
    K p + (1 - K) q on m = 1 and the complement on m = 0.
    """
    w1 = K * p + (1.0 - K) * q
    if ((w1 <= 0.0) | (w1 >= 1.0)).any():
        raise ValueError("rates put g(x) on the boundary {0, 1}")
    return np.log(np.where(m == 1.0, w1, 1.0 - w1))


def alt_loglik_bernoulli(data: LabeledDataset, region: KernelRegion, rates: RatePair) -> float:
    _require(data, "bernoulli")
    K = _kernel(data, region)
    return float(bernoulli_terms(data.m, K, rates.p, rates.q).sum()) / data.n


def eval_binary_setting_bernoulli(data: LabeledDataset, region: KernelRegion,
                                  rates: RatePair) -> float:
    _require(data, "bernoulli")
    K = _kernel(data, region)
    return float(bernoulli_binary_terms(data.m, K, rates.p, rates.q).sum()) / data.n


def grad_bernoulli(data: LabeledDataset, region: KernelRegion,
                   rates: RatePair) -> tuple[float, float]:
    _require(data, "bernoulli")
    K = _kernel(data, region)
    mask = data.measured_mask
    res = _kernels_py.bernoulli_evaluator(K, mask, 0, 0)(rates.p, rates.q)
    if res is None:
        raise ValueError("rates put zero probability on an observed value")
    return res[1], res[2]


def conservation_residual(data: LabeledDataset, region: KernelRegion,
                          rates: RatePair) -> tuple[float, float]:
    """Relative gaps in sum_M 1/g = |B| and sum_{B\\M} 1/(1-g) = |B|."""
    _require(data, "bernoulli")
    K = _kernel(data, region)
    mask = data.measured_mask
    n = data.n
    g = rates.p * K + rates.q * (1.0 - K)
    with np.errstate(divide="ignore"):
        sm = float((1.0 / g[mask]).sum())
        su = float((1.0 / (1.0 - g[~mask])).sum())
    return abs(sm - n) / n, abs(su - n) / n


def feasibility_bounds(data: LabeledDataset, region: KernelRegion, rates: RatePair,
                       tol: float = 1e-12) -> bool:
    """g >= 1/|B| on M and g <= 1 - 1/|B| off M, up to ``tol``."""
    _require(data, "bernoulli")
    K = _kernel(data, region)
    mask = data.measured_mask
    n = data.n
    g = rates.p * K + rates.q * (1.0 - K)
    return bool((g[mask] >= 1.0 / n - tol).all() and (g[~mask] <= 1.0 - 1.0 / n + tol).all())


def bernoulli_start(q0: float, n: int) -> RatePair:
    """Default first-center start: p just above the null rate."""
    return RatePair(min(1.0 - 1.0 / n, q0 + 0.1), q0)


def solve_phi_bernoulli(data: LabeledDataset, region: KernelRegion,
                        config: SolverConfig | None = None, trace: bool = False,
                        kernels=None) -> DiscrepancyResult:
    """Maximize the Bernoulli likelihood over (p, q) by projected Newton/gradient ascent.

    With ``trace=True`` the iterates are recorded (numpy kernels only).
    """
    _require(data, "bernoulli")
    config = config or SolverConfig()
    K = _kernel(data, region)
    mask = data.measured_mask
    q0, _ = null_mle_bernoulli(data)
    start = config.warm_start or bernoulli_start(q0, data.n)
    iterates = [] if trace else None
    if trace:
        p, q, phi, steps, conv = _kernels_py.solve_bernoulli(
            K, mask, 0, 0, start.p, start.q, config.max_steps, config.grad_tolerance,
            config.enforce_p_ge_q, trace=iterates)
    else:
        kernels = kernels or backend.kernels
        p, q, phi, steps, conv = kernels.solve_bernoulli(
            np.ascontiguousarray(K), mask, 0, 0, start.p, start.q, config.max_steps,
            config.grad_tolerance, config.enforce_p_ge_q)
    rates = RatePair(p, q)
    if 0 < data.n_measured < data.n:
        res = max(conservation_residual(data, region, rates))
    else:
        res = 0.0
    return DiscrepancyResult(phi, rates, steps, res, conv, trace=iterates)


# Gaussian

def _sigma(data, sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    _require(data, "gaussian")


def null_mle_gaussian(data: LabeledDataset, sigma: float = 1.0) -> tuple[float, float]:
    _sigma(data, sigma)
    q0 = float(data.m.mean())
    d = data.m - q0
    return q0, -float(d @ d) / (2.0 * sigma * sigma * data.n)


def alt_loglik_gaussian(data: LabeledDataset, region: KernelRegion, rates: RatePair,
                        sigma: float = 1.0) -> float:
    _sigma(data, sigma)
    K = _kernel(data, region)
    d = data.m - (rates.p * K + rates.q * (1.0 - K))
    return -float(d @ d) / (2.0 * sigma * sigma * data.n)


def gaussian_sums(m, K) -> tuple[float, float, float, float, float]:
    """(K_m, K_2, K_pm, K_-m, K_-2): sums of Km, K^2, K(1-K), (1-K)m, (1-K)^2."""
    K1 = 1.0 - K
    return (float(K @ m), float(K @ K), float(K @ K1), float(K1 @ m), float(K1 @ K1))


def phi_gaussian_closed_form(data: LabeledDataset, region: KernelRegion, sigma: float = 1.0,
                             enforce_p_ge_q: bool = True) -> DiscrepancyResult:
    """Exact maximizer of the Gaussian likelihood: a two-column least-squares fit.

    A singular system (K constant over B) yields Phi = 0 at the null rate with
    ``singular=True``.  Under the one-sided constraint a fit with p < q is
    replaced by the constrained optimum p = q = mean(m), which has Phi = 0.
    """
    _sigma(data, sigma)
    m = data.m
    n = data.n
    K = _kernel(data, region)
    mbar = float(m.mean())
    km, k2, kpm, knm, kn2 = gaussian_sums(m, K)
    den = kpm * kpm - k2 * kn2
    if abs(den) <= 1e-12 * k2 * kn2 or k2 == 0.0 or kn2 == 0.0:
        return DiscrepancyResult(0.0, RatePair(mbar, mbar), 0, 0.0, True, singular=True)
    p = (kpm * knm - km * kn2) / den
    q = (km * kpm - k2 * knm) / den
    if enforce_p_ge_q and p < q:
        return DiscrepancyResult(0.0, RatePair(mbar, mbar), 0, 0.0, True)
    d0 = m - mbar
    d1 = m - p * K - q * (1.0 - K)
    phi = (float(d0 @ d0) - float(d1 @ d1)) / (2.0 * sigma * sigma * n)
    return DiscrepancyResult(max(phi, 0.0), RatePair(p, q), 0, abs(float(d1.sum())) / n, True)


def eval_binary_setting_gaussian(data: LabeledDataset, region: KernelRegion, rates: RatePair,
                                 sigma: float = 1.0) -> float:
    """Mixture log-likelihood: with probability K the value has mean p, else q."""
    _sigma(data, sigma)
    K = _kernel(data, region)
    return float(gaussian_binary_terms(data.m, K, rates.p, rates.q, sigma).sum()) / data.n


def gaussian_binary_terms(m, K, p, q, sigma):
    s2 = 2.0 * sigma * sigma
    with np.errstate(divide="ignore"):
        a = np.log(K) - (m - p) ** 2 / s2
        b = np.log1p(-K) - (m - q) ** 2 / s2
    return np.logaddexp(a, b)


# Poisson

def _poisson_cap(data, rate_cap):
    return rate_cap if rate_cap is not None else max(1.0, 2.0 * float(data.m.max()))


def null_mle_poisson(data: LabeledDataset) -> tuple[float, float]:
    _require(data, "poisson")
    q0 = float(data.m.mean())
    return q0, float((-q0 + _mlog(data.m, q0)).mean())


def poisson_terms(m, K, p, q) -> np.ndarray:
    g = p * K + q * (1.0 - K)
    if ((g <= 0.0) & (m > 0)).any():
        raise ValueError("zero intensity at a point with positive count")
    return -g + _mlog(m, g)


def alt_loglik_poisson(data: LabeledDataset, region: KernelRegion, rates: RatePair) -> float:
    _require(data, "poisson")
    K = _kernel(data, region)
    return float(poisson_terms(data.m, K, rates.p, rates.q).sum()) / data.n


def poisson_evaluator(K, m):
    n = K.shape[0]
    K1 = 1.0 - K
    pos = m > 0
    Kp, K1p, mp = K[pos], K1[pos], m[pos]
    sK, sK1 = float(K.sum()), float(K1.sum())

    def evaluate(p, q):
        g = p * Kp + q * K1p
        if (g <= 0.0).any():
            return None
        r = mp / g
        r2 = r / g
        f = -(p * sK + q * sK1) + float(mp @ np.log(g))
        return (f / n, (float(Kp @ r) - sK) / n, (float(K1p @ r) - sK1) / n,
                -float((Kp * Kp) @ r2) / n, -float((Kp * K1p) @ r2) / n,
                -float((K1p * K1p) @ r2) / n)

    return evaluate


def grad_poisson(data: LabeledDataset, region: KernelRegion,
                 rates: RatePair) -> tuple[float, float]:
    _require(data, "poisson")
    res = poisson_evaluator(_kernel(data, region), data.m)(rates.p, rates.q)
    if res is None:
        raise ValueError("zero intensity at a point with positive count")
    return res[1], res[2]


def solve_phi_poisson(data: LabeledDataset, region: KernelRegion,
                      config: SolverConfig | None = None,
                      rate_cap: float | None = None) -> DiscrepancyResult:
    """Maximize the Poisson likelihood over intensities in (0, rate_cap]."""
    _require(data, "poisson")
    config = config or SolverConfig()
    K = _kernel(data, region)
    m = data.m
    q0, ell0 = null_mle_poisson(data)
    if q0 == 0.0 or K.max() == 0.0:
        return DiscrepancyResult(0.0, RatePair(q0, q0), 0, 0.0, True)
    cap = _poisson_cap(data, rate_cap)
    rows = _rates.box_constraints(_rates.BOX_EPS * cap, cap, config.enforce_p_ge_q)
    evaluate = poisson_evaluator(K, m)
    start = config.warm_start or RatePair(min(cap, 2.0 * q0), q0)
    p, q = _rates.project(start.p, start.q, rows)
    res = evaluate(p, q)
    if res is None or res[0] < ell0:
        p, q = _rates.project(q0, q0, rows)
    p, q, f, steps, conv = _rates.maximize(evaluate, rows, p, q, config.max_steps,
                                           config.grad_tolerance)
    g = p * K + q * (1.0 - K)
    resid = abs(float(g.sum()) - float(m.sum())) / data.n
    return DiscrepancyResult(f - ell0, RatePair(p, q), steps, resid, conv)


def eval_binary_setting_poisson(data: LabeledDataset, region: KernelRegion,
                                rates: RatePair) -> float:
    """Mixture log-likelihood: with probability K the count has intensity p, else q."""
    _require(data, "poisson")
    K = _kernel(data, region)
    return float(poisson_binary_terms(data.m, K, rates.p, rates.q).sum()) / data.n


def poisson_binary_terms(m, K, p, q):
    with np.errstate(divide="ignore"):
        a = np.log(K) - p + _mlog(m, p)
        b = np.log1p(-K) - q + _mlog(m, q)
    return np.logaddexp(a, b)
