"""Bootstrap particle filtering, coupled resampling and the multilevel filter.

The plain filter propagates particles through the level-l unit-interval
Euler kernel and weights them by the observation density, resampling every
step; the running product of average unnormalized weights estimates the
marginal likelihood unbiasedly.  The multilevel filter runs one plain
filter at level 1 plus, independently for each l >= 2, a pair filter whose
particles move under the exact fine/coarse coupling and whose ancestor
indices are drawn by maximal coupling of the two weight vectors.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import EstimatorReport, LevelSchedule
from .rng import ProbabilityVector, RngStream, categorical_sample_many
from .sde import CoupledState, LevelIndex, SdeModel, coupled_transition, simulate_unit_interval


class ParticleDegeneracyError(RuntimeError):
    """All particle weights vanished at one assimilation step."""

    def __init__(self, step: int, level: Optional[int] = None):
        self.step = step
        self.level = level
        where = f" at level {level}" if level is not None else ""
        super().__init__(f"all particle weights are zero at observation step {step}{where}")


@dataclass
class HmmModel:
    """Partially observed diffusion: latent SDE plus observation density.

    obs_log_density : callable
        Batched log G, maps (states (N, d), y (m,)) -> (N,).
    proposal : optional callable
        ``proposal(parents, level, stream) -> (states, log_q)`` replacing the
        bootstrap dynamics; requires ``log_transition_density`` so weights can
        be corrected by log G + log Q - log q.
    """

    sde: SdeModel
    obs_log_density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    observations: np.ndarray
    proposal: Optional[Callable] = None
    log_transition_density: Optional[Callable] = None

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.proposal is not None and self.log_transition_density is None:
            raise ValueError("a non-bootstrap proposal needs log_transition_density")

    @property
    def n_obs(self) -> int:
        return self.observations.shape[0]


@dataclass
class WeightedEnsemble:
    """Particles with log-weights for one assimilation step."""

    particles: np.ndarray      # (N, d)
    log_weights: np.ndarray    # (N,)

    @property
    def normalized_weights(self) -> ProbabilityVector:
        return ProbabilityVector.from_log_weights(self.log_weights)

    def estimate(self, phi: Callable[[np.ndarray], np.ndarray]) -> float:
        w = self.normalized_weights.weights
        return float(np.dot(w, np.asarray(phi(self.particles), dtype=float)))


@dataclass
class CoupledEnsemble:
    """Paired fine/coarse particles with separately normalized weights."""

    fine_particles: np.ndarray
    coarse_particles: np.ndarray
    fine_log_weights: np.ndarray
    coarse_log_weights: np.ndarray

    def __post_init__(self):
        if len(self.fine_particles) != len(self.coarse_particles):
            raise ValueError("fine and coarse populations must have equal size")

    @property
    def fine_weights(self) -> ProbabilityVector:
        return ProbabilityVector.from_log_weights(self.fine_log_weights)

    @property
    def coarse_weights(self) -> ProbabilityVector:
        return ProbabilityVector.from_log_weights(self.coarse_log_weights)

    def difference_estimate(self, phi: Callable[[np.ndarray], np.ndarray]) -> float:
        wf = self.fine_weights.weights
        wc = self.coarse_weights.weights
        return float(
            np.dot(wf, phi(self.fine_particles)) - np.dot(wc, phi(self.coarse_particles))
        )


def multinomial_resample(weights, N: int, stream: RngStream) -> np.ndarray:
    """N i.i.d. ancestor indices drawn from the weight vector."""
    return categorical_sample_many(weights, N, stream)


def systematic_resample(weights, N: int, stream: RngStream) -> np.ndarray:
    """Stratified ancestors from a single uniform offset; E[count_j] = N w_j."""
    p = weights.weights if isinstance(weights, ProbabilityVector) else np.asarray(weights, float)
    offset = stream.generator.random()
    positions = (np.arange(N) + offset) / N
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right").clip(0, len(p) - 1)


_RESAMPLERS = {"multinomial": multinomial_resample, "systematic": systematic_resample}


@dataclass
class PfResult:
    """Per-step ensembles, ancestry and the log marginal-likelihood estimate."""

    ensembles: list[WeightedEnsemble]
    log_z: float
    ancestries: np.ndarray     # (n_obs, N); step 0 row is the identity
    level: int

    def estimates(self, phi) -> np.ndarray:
        return np.array([e.estimate(phi) for e in self.ensembles])

    def trace_trajectory(self, stream: RngStream) -> np.ndarray:
        """Sample one ancestral path (n_obs, d) by backward index tracing."""
        n = len(self.ensembles)
        j = int(categorical_sample_many(self.ensembles[-1].normalized_weights, 1, stream)[0])
        path = np.zeros((n, self.ensembles[0].particles.shape[1]))
        for k in range(n - 1, -1, -1):
            path[k] = self.ensembles[k].particles[j]
            j = int(self.ancestries[k][j])
        return path

    def trace_all(self) -> np.ndarray:
        """Ancestral paths of every terminal particle, shape (n_obs, N, d)."""
        n = len(self.ensembles)
        N, d = self.ensembles[0].particles.shape
        paths = np.zeros((n, N, d))
        idx = np.arange(N)
        for k in range(n - 1, -1, -1):
            paths[k] = self.ensembles[k].particles[idx]
            idx = self.ancestries[k][idx]
        return paths


def particle_filter_run(
    model: HmmModel,
    level: LevelIndex,
    N: int,
    stream: RngStream,
    resampling: str = "multinomial",
    ess_threshold: float = 1.0,
) -> PfResult:
    """Bootstrap filter at one level.

    Resamples every step by default (``ess_threshold=1.0``); a threshold
    below 1 switches to ESS-triggered resampling, which changes the
    estimator and is therefore opt-in.
    """
    if N < 2:
        raise ValueError("need at least 2 particles")
    if model.n_obs == 0:
        raise ValueError("need at least one observation")
    resampler = _RESAMPLERS[resampling]
    d = model.sde.dim
    parents = np.broadcast_to(model.sde.initial_state, (N, d)).copy()
    carried_lw = np.zeros(N)
    ensembles: list[WeightedEnsemble] = []
    ancestries = np.zeros((model.n_obs, N), dtype=np.int64)
    log_z = 0.0
    for k in range(model.n_obs):
        if k > 0:
            weights = ensembles[-1].normalized_weights
            ess = 1.0 / np.sum(weights.weights ** 2)
            if ess <= ess_threshold * N:
                idx = resampler(weights, N, stream)
                parents = ensembles[-1].particles[idx]
                carried_lw = np.zeros(N)
                ancestries[k] = idx
            else:
                parents = ensembles[-1].particles
                carried_lw = np.log(N * weights.weights)
                ancestries[k] = np.arange(N)
        else:
            ancestries[k] = np.arange(N)
        if model.proposal is None:
            particles = simulate_unit_interval(model.sde, level, parents, stream)
            log_g = model.obs_log_density(particles, model.observations[k])
        else:
            particles, log_q = model.proposal(parents, level, stream)
            log_g = (
                model.obs_log_density(particles, model.observations[k])
                + model.log_transition_density(parents, particles, level)
                - log_q
            )
        lw = carried_lw + log_g
        if not np.any(np.isfinite(lw)):
            raise ParticleDegeneracyError(step=k + 1, level=level.l)
        m = np.max(lw)
        log_z += m + math.log(np.exp(lw - m).sum()) - math.log(N)
        ensembles.append(WeightedEnsemble(particles=particles, log_weights=lw))
    return PfResult(ensembles=ensembles, log_z=float(log_z), ancestries=ancestries, level=level.l)


def maximal_coupling_resample(
    fine_weights,
    coarse_weights,
    N: int,
    stream: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """Jointly resample N ancestor-index pairs with maximal meeting probability.

    Each pair independently: with probability alpha = sum_j min(wf_j, wc_j)
    a common index is drawn from min(wf, wc)/alpha; otherwise the two
    indices are drawn independently from the normalized residuals.  Either
    marginal is exactly categorical in its own weight vector.
    """
    wf = fine_weights.weights if isinstance(fine_weights, ProbabilityVector) else np.asarray(fine_weights, float)
    wc = coarse_weights.weights if isinstance(coarse_weights, ProbabilityVector) else np.asarray(coarse_weights, float)
    if wf.shape != wc.shape:
        raise ValueError("weight vectors must have equal length")
    overlap = np.minimum(wf, wc)
    alpha = float(overlap.sum())
    u = stream.generator.random(N)
    meet = u < alpha
    idx_fine = np.zeros(N, dtype=np.int64)
    idx_coarse = np.zeros(N, dtype=np.int64)
    n_meet = int(meet.sum())
    if n_meet:
        common = categorical_sample_many(ProbabilityVector(overlap), n_meet, stream)
        idx_fine[meet] = common
        idx_coarse[meet] = common
    n_apart = N - n_meet
    if n_apart:
        # alpha < 1 whenever this branch is reachable; residuals are clipped
        # against tiny negative round-off before renormalizing
        res_fine = np.clip(wf - overlap, 0.0, None)
        res_coarse = np.clip(wc - overlap, 0.0, None)
        idx_fine[~meet] = categorical_sample_many(ProbabilityVector(res_fine), n_apart, stream)
        idx_coarse[~meet] = categorical_sample_many(ProbabilityVector(res_coarse), n_apart, stream)
    return idx_fine, idx_coarse


@dataclass
class MlpfResult:
    """Per-step multilevel estimates with their level decomposition."""

    step_reports: list[EstimatorReport]
    per_level_step_means: np.ndarray       # (L, n_obs); row 0 is the level-1 filter
    per_level_step_variances: np.ndarray   # (L, n_obs) contribution-spread proxies
    schedule: LevelSchedule
    wall_seconds: float

    @property
    def step_estimates(self) -> np.ndarray:
        return np.array([r.value for r in self.step_reports])


def mlpf_run(
    model: HmmModel,
    schedule: LevelSchedule,
    phi: Callable[[np.ndarray], np.ndarray],
    stream: RngStream,
) -> MlpfResult:
    """Multilevel particle filter over a planned schedule.

    Level 1 runs the plain bootstrap filter with N_1 particles; each level
    l >= 2 runs an independent coupled filter with N_l pairs: maximal
    coupling resampling of (fine, coarse) weights followed by the coupled
    unit-interval transition.  The step-k estimate telescopes the level-1
    filter mean and the per-level weighted differences.
    """
    if schedule.max_level < 2:
        raise ValueError("multilevel filter needs max_level >= 2")
    t0 = time.perf_counter()
    L = schedule.max_level
    n = model.n_obs
    d = model.sde.dim
    means = np.zeros((L, n))
    variances = np.zeros((L, n))

    base = particle_filter_run(model, LevelIndex(1), schedule.n_at(1), stream.split(1))
    for k, ens in enumerate(base.ensembles):
        w = ens.normalized_weights.weights
        contrib = len(w) * w * np.asarray(phi(ens.particles), dtype=float)
        means[0, k] = contrib.mean()
        variances[0, k] = contrib.var(ddof=1)

    for l in range(2, L + 1):
        level = LevelIndex(l)
        sub = stream.split(l)
        N_l = schedule.n_at(l)
        start = np.broadcast_to(model.sde.initial_state, (N_l, d)).copy()
        pair = coupled_transition(model.sde, CoupledState(start, start.copy()), level, sub)
        for k in range(n):
            y = model.observations[k]
            lw_f = model.obs_log_density(pair.fine, y)
            lw_c = model.obs_log_density(pair.coarse, y)
            if not np.any(np.isfinite(lw_f)) or not np.any(np.isfinite(lw_c)):
                raise ParticleDegeneracyError(step=k + 1, level=l)
            ens = CoupledEnsemble(pair.fine, pair.coarse, lw_f, lw_c)
            wf = ens.fine_weights.weights
            wc = ens.coarse_weights.weights
            contrib = N_l * (
                wf * np.asarray(phi(pair.fine), dtype=float)
                - wc * np.asarray(phi(pair.coarse), dtype=float)
            )
            means[l - 1, k] = contrib.mean()
            variances[l - 1, k] = contrib.var(ddof=1)
            if k < n - 1:
                idx_f, idx_c = maximal_coupling_resample(wf, wc, N_l, sub)
                pair = coupled_transition(
                    model.sde,
                    CoupledState(pair.fine[idx_f], pair.coarse[idx_c]),
                    level,
                    sub,
                )

    wall = time.perf_counter() - t0
    unit_cost = schedule.total_cost
    reports = [
        EstimatorReport(
            value=float(means[:, k].sum()),
            per_level_means=list(means[:, k]),
            per_level_variances=list(variances[:, k]),
            total_cost=(k + 1) * unit_cost,
            wall_seconds=wall,
            seed=stream.seed,
        )
        for k in range(n)
    ]
    return MlpfResult(
        step_reports=reports,
        per_level_step_means=means,
        per_level_step_variances=variances,
        schedule=schedule,
        wall_seconds=wall,
    )


# ---------------------------------------------------------------------------
# Observation-model helpers
# ---------------------------------------------------------------------------

def linear_gaussian_obs(H: np.ndarray, R: np.ndarray) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Batched log N(y; H u, R) including normalizing constants.

    Keeping the constants makes the filter's marginal-likelihood estimate
    directly comparable to the exact prediction-error decomposition.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    m = H.shape[0]
    chol = np.linalg.cholesky(R)
    log_norm = -0.5 * (m * math.log(2.0 * math.pi)) - np.log(np.diag(chol)).sum()

    def log_g(states: np.ndarray, y: np.ndarray) -> np.ndarray:
        resid = np.atleast_1d(y)[None, :] - states @ H.T
        alpha = np.linalg.solve(chol, resid.T)
        return log_norm - 0.5 * np.sum(alpha ** 2, axis=0)

    return log_g


def simulate_hmm_data(
    sde: SdeModel,
    level: LevelIndex,
    H: np.ndarray,
    R: np.ndarray,
    n_obs: int,
    stream: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """One latent path at the given level plus noisy linear observations."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    chol = np.linalg.cholesky(R)
    state = sde.initial_state.copy()
    states = np.zeros((n_obs, sde.dim))
    ys = np.zeros((n_obs, H.shape[0]))
    for k in range(n_obs):
        state = simulate_unit_interval(sde, level, state, stream)
        states[k] = state
        ys[k] = H @ state + chol @ stream.generator.standard_normal(H.shape[0])
    return states, ys
