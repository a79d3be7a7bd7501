"""Level planning and the telescoping multilevel estimator.

The estimator targets E[phi(U)] under the finest-level approximation via

    (1/N_1) sum phi(u_1^i)  +  sum_{l=2}^{L} (1/N_l) sum {phi(u_l^i) - phi(u_{l-1}^i)}

with per-level sample sizes balancing the coupled-difference variance decay
(rate beta) against the per-sample cost growth (rate zeta).  Costs are
accounted analytically in units of h_l**-zeta per sample so cost/error
slopes are hardware independent.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .rng import RngStream

#: guard against ceil(4.0000000000000004) on exact powers of two
_CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class RateParams:
    """Convergence/cost exponents: bias O(h^alpha), coupled variance O(h^beta),
    per-sample cost O(h^-zeta)."""

    alpha: float
    beta: float
    zeta: float

    def __post_init__(self):
        for name in ("alpha", "beta", "zeta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class LevelSchedule:
    """Planned levels 1..L with sample counts, step sizes and cost weights."""

    max_level: int
    samples: list[int]
    step_sizes: list[float]
    lagrange_constant: float
    rates: RateParams

    def __post_init__(self):
        if self.max_level < 1 or len(self.samples) != self.max_level:
            raise ValueError("need one sample count per level 1..L")
        if any(n < 1 for n in self.samples):
            raise ValueError("sample counts must be >= 1")
        expected_h = [2.0 ** (-l) for l in range(1, self.max_level + 1)]
        if not np.allclose(self.step_sizes, expected_h, rtol=0, atol=0):
            raise ValueError("step sizes must be h_l = 2**-l")

    def n_at(self, level: int) -> int:
        return self.samples[level - 1]

    @property
    def total_cost(self) -> float:
        """Planned cost sum_l N_l * h_l**-zeta in cost units."""
        zeta = self.rates.zeta
        return float(
            sum(n * 2.0 ** (l * zeta) for l, n in enumerate(self.samples, start=1))
        )


@dataclass
class EstimatorReport:
    """One estimator run: value, per-level decomposition and planned cost."""

    value: float
    per_level_means: list[float]
    per_level_variances: list[float]
    total_cost: float
    wall_seconds: float
    seed: int

    def __post_init__(self):
        total = float(sum(self.per_level_means))
        if not math.isclose(self.value, total, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("value must equal the sum of per-level means")


def choose_max_level(epsilon: float, alpha: float) -> int:
    """Smallest L with bias 2**(-alpha*L) below the error target epsilon."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    L = math.ceil(-math.log(epsilon) / (alpha * math.log(2.0)) - _CEIL_SLACK)
    return max(L, 1)


def allocate_samples(
    epsilon: float,
    rates: RateParams,
    L: int,
    scale: float = 1.0,
    min_samples: int = 2,
) -> LevelSchedule:
    """Variance-optimal sample counts N_l = ceil(scale * eps^-2 * h_l^((b+z)/2) * K_L).

    K_L = sum_l h_l^((b-z)/2) is the Lagrange normalizer of the cost
    minimization under the variance constraint.  ``scale`` absorbs the
    model-dependent variance constant (calibrated from a pilot run);
    ``min_samples`` keeps every level's variance estimable.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if L < 1:
        raise ValueError("L must be >= 1")
    h = [2.0 ** (-l) for l in range(1, L + 1)]
    K_L = float(sum(hl ** ((rates.beta - rates.zeta) / 2.0) for hl in h))
    samples = [
        max(
            min_samples,
            math.ceil(scale * epsilon ** -2 * hl ** ((rates.beta + rates.zeta) / 2.0) * K_L - _CEIL_SLACK),
        )
        for hl in h
    ]
    return LevelSchedule(L, samples, h, K_L, rates)


def allocate_samples_covariance(
    epsilon: float,
    rates: RateParams,
    L: int,
    scale: float = 1.0,
    min_samples: int = 2,
) -> LevelSchedule:
    """Cube-root allocation for multilevel covariance estimation.

    The multilevel sample-covariance error adds per-level contributions in
    an l1 fashion, so minimizing cost under sum_l (h_l^beta / N_l)^(1/2)
    <= eps gives N_l = eps^-2 * h_l^((beta+2*zeta)/3) * K~_L with
    K~_L^(1/2) = sum_l h_l^((beta-zeta)/3); the planned cost is then
    eps^-2 * K~_L^(3/2).
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if L < 1:
        raise ValueError("L must be >= 1")
    h = [2.0 ** (-l) for l in range(1, L + 1)]
    K_sqrt = float(sum(hl ** ((rates.beta - rates.zeta) / 3.0) for hl in h))
    K_tilde = K_sqrt ** 2
    samples = [
        max(
            min_samples,
            math.ceil(scale * epsilon ** -2 * hl ** ((rates.beta + 2.0 * rates.zeta) / 3.0) * K_tilde - _CEIL_SLACK),
        )
        for hl in h
    ]
    return LevelSchedule(L, samples, h, K_tilde, rates)


def mc_estimate(
    sampler: Callable[[RngStream, int], np.ndarray],
    N: int,
    stream: RngStream,
    cost_per_sample: float = 1.0,
) -> EstimatorReport:
    """Plain Monte Carlo mean of a batched sampler ``sampler(stream, n)``."""
    if N < 2:
        raise ValueError(f"need N >= 2 to estimate a variance, got {N}")
    t0 = time.perf_counter()
    values = np.asarray(sampler(stream, N), dtype=float)
    mean = float(values.mean())
    var = float(values.var(ddof=1))
    return EstimatorReport(
        value=mean,
        per_level_means=[mean],
        per_level_variances=[var],
        total_cost=float(N * cost_per_sample),
        wall_seconds=time.perf_counter() - t0,
        seed=stream.seed,
    )


def mlmc_estimate(
    coupled_sampler: Callable[[int, RngStream, int], tuple[np.ndarray, np.ndarray]],
    phi_level1: Callable[[RngStream, int], np.ndarray],
    schedule: LevelSchedule,
    stream: RngStream,
) -> EstimatorReport:
    """Telescoping multilevel estimator over a planned schedule.

    ``phi_level1(stream, n)`` draws n level-1 values of phi;
    ``coupled_sampler(l, stream, n)`` draws n coupled (fine, coarse) value
    pairs at fine level l.  Levels use disjoint child streams and are
    aggregated in ascending order, so the result is independent of any
    task scheduling.
    """
    t0 = time.perf_counter()
    means: list[float] = []
    variances: list[float] = []
    base = np.asarray(phi_level1(stream.split(1), schedule.n_at(1)), dtype=float)
    means.append(float(base.mean()))
    variances.append(float(base.var(ddof=1)) if base.size > 1 else 0.0)
    for l in range(2, schedule.max_level + 1):
        fine, coarse = coupled_sampler(l, stream.split(l), schedule.n_at(l))
        diff = np.asarray(fine, dtype=float) - np.asarray(coarse, dtype=float)
        means.append(float(diff.mean()))
        variances.append(float(diff.var(ddof=1)) if diff.size > 1 else 0.0)
    return EstimatorReport(
        value=float(sum(means)),
        per_level_means=means,
        per_level_variances=variances,
        total_cost=schedule.total_cost,
        wall_seconds=time.perf_counter() - t0,
        seed=stream.seed,
    )


def fit_rates(per_level_stats: Sequence[tuple[int, float, float]]) -> tuple[float, float]:
    """Fit decay exponents from per-level difference statistics.

    ``per_level_stats`` holds (level, |mean difference|, variance of the
    difference) triples.  Returns ``(alpha_hat, beta_hat)``: the negated
    least-squares slopes of log2|mean| and log2(variance) against level.
    Non-positive entries cannot be log-transformed and are skipped with a
    warning.
    """
    if len(per_level_stats) < 3:
        raise ValueError("need at least 3 levels to fit rates")
    levels = np.array([s[0] for s in per_level_stats], dtype=float)
    mean_abs = np.array([s[1] for s in per_level_stats], dtype=float)
    var = np.array([s[2] for s in per_level_stats], dtype=float)

    def neg_slope(ls, ys, label):
        keep = ys > 0
        if np.sum(~keep):
            warnings.warn(f"excluded {int(np.sum(~keep))} non-positive {label} entries from rate fit")
        if keep.sum() < 3:
            raise ValueError(f"fewer than 3 positive {label} entries")
        slope = np.polyfit(ls[keep], np.log2(ys[keep]), 1)[0]
        return -float(slope)

    alpha_hat = neg_slope(levels, mean_abs, "mean-difference")
    beta_hat = neg_slope(levels, var, "variance")
    return alpha_hat, beta_hat


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 points for a slope")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
