"""Particle marginal Metropolis-Hastings and its multilevel extension.

The plain chain targets the static-parameter posterior of a discretized,
partially observed diffusion: each proposal runs a fresh bootstrap filter
whose unbiased marginal-likelihood estimate enters the acceptance ratio.

The multilevel difference estimator runs the same chain against a pair
target built from the exact forward coupling: pairs move under the coupled
unit-interval kernel and are weighted by the dominating potential
max(G(fine), G(coarse)).  Because that joint law only approximately has the
two level posteriors as marginals, each retained trajectory pair carries
correction weights (products of G / dominating potential, always in (0,1]),
and the level increment is the difference of two self-normalized ratios.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import EstimatorReport, LevelSchedule
from .mcmc import TARGET_ACCEPTANCE
from .particle_filter import (
    HmmModel,
    ParticleDegeneracyError,
    particle_filter_run,
)
from .rng import ProbabilityVector, RngStream, categorical_sample_many
from .sde import CoupledState, LevelIndex, coupled_transition


@dataclass
class ParamModel:
    """Static-parameter family of hidden Markov models.

    make_hmm : callable theta -> HmmModel with that parameter baked into
        drift/diffusion/observation density.
    log_prior : log prior density on theta (-inf outside support).
    sample_prior : callable(stream) -> theta draw.
    """

    dim_theta: int
    log_prior: Callable[[np.ndarray], float]
    sample_prior: Callable[[RngStream], np.ndarray]
    make_hmm: Callable[[np.ndarray], HmmModel]


# ---------------------------------------------------------------------------
# Coupled bootstrap filter on the pair space
# ---------------------------------------------------------------------------

def coupled_log_potential(hmm: HmmModel, fine: np.ndarray, coarse: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Log of the dominating pair potential max(G(fine, y), G(coarse, y))."""
    return np.maximum(hmm.obs_log_density(fine, y), hmm.obs_log_density(coarse, y))


@dataclass
class CoupledPfResult:
    """Pair-filter history: per-step pair particles, weights and ancestry."""

    fine: list[np.ndarray]
    coarse: list[np.ndarray]
    log_weights: list[np.ndarray]
    ancestries: np.ndarray
    log_z: float

    def trace_pair(self, stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
        """One ancestral (fine, coarse) trajectory pair by backward tracing."""
        n = len(self.fine)
        d = self.fine[0].shape[1]
        j = int(
            categorical_sample_many(ProbabilityVector.from_log_weights(self.log_weights[-1]), 1, stream)[0]
        )
        fine_path = np.zeros((n, d))
        coarse_path = np.zeros((n, d))
        for k in range(n - 1, -1, -1):
            fine_path[k] = self.fine[k][j]
            coarse_path[k] = self.coarse[k][j]
            j = int(self.ancestries[k][j])
        return fine_path, coarse_path

    def trace_all_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Ancestral pair paths of every terminal particle: two (n, N, d) arrays."""
        n = len(self.fine)
        N, d = self.fine[0].shape
        fine_paths = np.zeros((n, N, d))
        coarse_paths = np.zeros((n, N, d))
        idx = np.arange(N)
        for k in range(n - 1, -1, -1):
            fine_paths[k] = self.fine[k][idx]
            coarse_paths[k] = self.coarse[k][idx]
            idx = self.ancestries[k][idx]
        return fine_paths, coarse_paths

    def final_weights(self) -> np.ndarray:
        return ProbabilityVector.from_log_weights(self.log_weights[-1]).weights


def coupled_particle_filter_run(
    hmm: HmmModel,
    fine_level: LevelIndex,
    N: int,
    stream: RngStream,
    potential: Optional[Callable] = None,
) -> CoupledPfResult:
    """Bootstrap filter on the (fine, coarse) pair space.

    Dynamics are the exact coupled transition; the weight of a pair is the
    dominating potential (or a caller-supplied one), so this is a plain
    filter on the doubled state space and its normalizing-constant estimate
    is unbiased for the pair target's normalizer.
    """
    if N < 2:
        raise ValueError("need at least 2 particles")
    if potential is None:
        potential = coupled_log_potential
    d = hmm.sde.dim
    n = hmm.n_obs
    start = np.broadcast_to(hmm.sde.initial_state, (N, d)).copy()
    pair = CoupledState(start, start.copy())
    fine_hist: list[np.ndarray] = []
    coarse_hist: list[np.ndarray] = []
    lw_hist: list[np.ndarray] = []
    ancestries = np.zeros((n, N), dtype=np.int64)
    log_z = 0.0
    for k in range(n):
        if k > 0:
            weights = ProbabilityVector.from_log_weights(lw_hist[-1])
            idx = categorical_sample_many(weights, N, stream)
            ancestries[k] = idx
            pair = CoupledState(fine_hist[-1][idx], coarse_hist[-1][idx])
        else:
            ancestries[k] = np.arange(N)
        pair = coupled_transition(hmm.sde, pair, fine_level, stream)
        lw = potential(hmm, pair.fine, pair.coarse, hmm.observations[k])
        if not np.any(np.isfinite(lw)):
            raise ParticleDegeneracyError(step=k + 1, level=fine_level.l)
        m = np.max(lw)
        log_z += m + math.log(np.exp(lw - m).sum()) - math.log(N)
        fine_hist.append(pair.fine)
        coarse_hist.append(pair.coarse)
        lw_hist.append(lw)
    return CoupledPfResult(
        fine=fine_hist,
        coarse=coarse_hist,
        log_weights=lw_hist,
        ancestries=ancestries,
        log_z=float(log_z),
    )


def correction_weights(
    hmm: HmmModel,
    fine_path: np.ndarray,
    coarse_path: np.ndarray,
    potential: Optional[Callable] = None,
) -> tuple[float, float]:
    """Importance corrections (H_fine, H_coarse) of one trajectory pair.

    Products over observation times of G(lane) / pair potential; with the
    default dominating potential both lie in (0, 1] and at every time at
    least one lane's factor is 1.
    """
    h_f, h_c = _correction_weights_all(
        hmm, fine_path[:, None, :], coarse_path[:, None, :], potential
    )
    return float(h_f[0]), float(h_c[0])


def _correction_weights_all(
    hmm: HmmModel,
    fine_paths: np.ndarray,
    coarse_paths: np.ndarray,
    potential: Optional[Callable] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized corrections for every traced pair path; (N,) each."""
    if potential is None:
        potential = coupled_log_potential
    n = fine_paths.shape[0]
    log_f = np.stack([hmm.obs_log_density(fine_paths[k], hmm.observations[k]) for k in range(n)])
    log_c = np.stack([hmm.obs_log_density(coarse_paths[k], hmm.observations[k]) for k in range(n)])
    log_pot = np.stack(
        [potential(hmm, fine_paths[k], coarse_paths[k], hmm.observations[k]) for k in range(n)]
    )
    return np.exp((log_f - log_pot).sum(axis=0)), np.exp((log_c - log_pot).sum(axis=0))


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------

@dataclass
class PmmhResult:
    thetas: np.ndarray          # (n_iters, dim_theta)
    log_zs: np.ndarray          # (n_iters,)
    trajectories: np.ndarray    # (n_iters, n_obs, d) retained latent paths
    acceptance_rate: float
    n_filter_runs: int
    n_burnin: int
    scale: float

    @property
    def kept_thetas(self) -> np.ndarray:
        return self.thetas[self.n_burnin:]


def _adapt_scale(log_scale: float, accept_prob: float, iteration: int) -> float:
    gamma = (iteration + 1.0) ** -0.6
    return log_scale + gamma * (accept_prob - TARGET_ACCEPTANCE)


def pmmh_chain(
    model: ParamModel,
    level: LevelIndex,
    n_particles: int,
    n_iters: int,
    stream: RngStream,
    proposal_scale: float = 0.2,
    adapt: bool = True,
    n_burnin: int = 0,
) -> PmmhResult:
    """Random-walk PMMH at a single discretization level.

    Each in-support proposal runs a fresh bootstrap filter; acceptance uses
    the filter's marginal-likelihood estimate times the prior ratio (the
    Gaussian walk is symmetric).  The retained latent trajectory is re-drawn
    by backward tracing whenever a proposal is accepted.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    theta = np.atleast_1d(np.asarray(model.sample_prior(stream), dtype=float))
    log_prior = float(model.log_prior(theta))
    if not np.isfinite(log_prior):
        raise ValueError("prior sample fell outside its own support")
    result = particle_filter_run(model.make_hmm(theta), level, n_particles, stream)
    log_z = result.log_z
    trajectory = result.trace_trajectory(stream)
    n_filter_runs = 1

    dim = theta.shape[0]
    log_scale = math.log(proposal_scale)
    thetas = np.zeros((n_iters, dim))
    log_zs = np.zeros(n_iters)
    trajectories = np.zeros((n_iters,) + trajectory.shape)
    accepted_after = 0
    for i in range(n_iters):
        scale = math.exp(log_scale)
        proposal = theta + scale * stream.generator.standard_normal(dim)
        lp_prop = float(model.log_prior(proposal))
        accept_prob = 0.0
        if np.isfinite(lp_prop):
            try:
                run = particle_filter_run(model.make_hmm(proposal), level, n_particles, stream)
                n_filter_runs += 1
                log_ratio = run.log_z + lp_prop - (log_z + log_prior)
                accept_prob = min(1.0, math.exp(min(log_ratio, 0.0)))
                if math.log(stream.generator.random()) < log_ratio:
                    theta, log_prior, log_z = proposal, lp_prop, run.log_z
                    trajectory = run.trace_trajectory(stream)
                    if i >= n_burnin:
                        accepted_after += 1
            except ParticleDegeneracyError as err:
                warnings.warn(f"degenerate filter treated as rejection: {err}")
        thetas[i] = theta
        log_zs[i] = log_z
        trajectories[i] = trajectory
        if adapt and i < n_burnin:
            log_scale = _adapt_scale(log_scale, accept_prob, i)
    kept = max(n_iters - n_burnin, 1)
    return PmmhResult(
        thetas=thetas,
        log_zs=log_zs,
        trajectories=trajectories,
        acceptance_rate=accepted_after / kept,
        n_filter_runs=n_filter_runs,
        n_burnin=n_burnin,
        scale=math.exp(log_scale),
    )


@dataclass
class MlPmmhDifference:
    """Level-increment estimate from a chain on the coupled pair target."""

    estimate: float
    fine_ratio: float
    coarse_ratio: float
    h_fine: np.ndarray
    h_coarse: np.ndarray
    thetas: np.ndarray
    acceptance_rate: float
    n_burnin: int

    @property
    def kept_slice(self) -> slice:
        return slice(self.n_burnin, None)


def ml_pmmh_difference(
    model: ParamModel,
    level: int,
    n_particles: int,
    n_iters: int,
    phi: Callable[[np.ndarray, np.ndarray], float],
    stream: RngStream,
    proposal_scale: float = 0.2,
    adapt: bool = True,
    n_burnin: int = 0,
    trajectory_mode: str = "traced",
    potential: Optional[Callable] = None,
) -> MlPmmhDifference:
    """Estimate the level-l minus level-(l-1) posterior difference of phi.

    Runs PMMH whose internal filter lives on the coupled pair space; along
    the chain the four expectations (phi*H and H for each lane) are
    accumulated and the difference of the two self-normalized ratios is
    returned.  ``trajectory_mode='traced'`` keeps one ancestral pair per
    retained filter run; ``'weighted'`` averages over all terminal
    particles with their weights.
    """
    if level < 2:
        raise ValueError("difference estimator needs level >= 2")
    if trajectory_mode not in ("traced", "weighted"):
        raise ValueError("trajectory_mode must be 'traced' or 'weighted'")
    fine_level = LevelIndex(level)
    theta = np.atleast_1d(np.asarray(model.sample_prior(stream), dtype=float))
    log_prior = float(model.log_prior(theta))

    def summarize(run: CoupledPfResult, hmm: HmmModel, th: np.ndarray):
        """Per-run contributions (phi_f*H_f, H_f, phi_c*H_c, H_c)."""
        if trajectory_mode == "traced":
            fine_path, coarse_path = run.trace_pair(stream)
            h_f, h_c = correction_weights(hmm, fine_path, coarse_path, potential)
            return (
                phi(th, fine_path) * h_f,
                h_f,
                phi(th, coarse_path) * h_c,
                h_c,
            )
        fine_paths, coarse_paths = run.trace_all_pairs()
        h_f, h_c = _correction_weights_all(hmm, fine_paths, coarse_paths, potential)
        w = run.final_weights()
        phi_f = np.array([phi(th, fine_paths[:, j]) for j in range(fine_paths.shape[1])])
        phi_c = np.array([phi(th, coarse_paths[:, j]) for j in range(coarse_paths.shape[1])])
        return (
            float(np.dot(w, phi_f * h_f)),
            float(np.dot(w, h_f)),
            float(np.dot(w, phi_c * h_c)),
            float(np.dot(w, h_c)),
        )

    hmm = model.make_hmm(theta)
    run = coupled_particle_filter_run(hmm, fine_level, n_particles, stream, potential)
    log_z = run.log_z
    current = summarize(run, hmm, theta)

    log_scale = math.log(proposal_scale)
    dim = theta.shape[0]
    stats = np.zeros((n_iters, 4))
    thetas = np.zeros((n_iters, dim))
    accepted_after = 0
    for i in range(n_iters):
        scale = math.exp(log_scale)
        proposal = theta + scale * stream.generator.standard_normal(dim)
        lp_prop = float(model.log_prior(proposal))
        accept_prob = 0.0
        if np.isfinite(lp_prop):
            try:
                hmm_prop = model.make_hmm(proposal)
                run = coupled_particle_filter_run(hmm_prop, fine_level, n_particles, stream, potential)
                log_ratio = run.log_z + lp_prop - (log_z + log_prior)
                accept_prob = min(1.0, math.exp(min(log_ratio, 0.0)))
                if math.log(stream.generator.random()) < log_ratio:
                    theta, log_prior, log_z = proposal, lp_prop, run.log_z
                    current = summarize(run, hmm_prop, theta)
                    if i >= n_burnin:
                        accepted_after += 1
            except ParticleDegeneracyError as err:
                warnings.warn(f"degenerate coupled filter treated as rejection: {err}")
        stats[i] = current
        thetas[i] = theta
        if adapt and i < n_burnin:
            log_scale = _adapt_scale(log_scale, accept_prob, i)

    kept = stats[n_burnin:]
    fine_ratio = kept[:, 0].sum() / kept[:, 1].sum()
    coarse_ratio = kept[:, 2].sum() / kept[:, 3].sum()
    return MlPmmhDifference(
        estimate=float(fine_ratio - coarse_ratio),
        fine_ratio=float(fine_ratio),
        coarse_ratio=float(coarse_ratio),
        h_fine=stats[:, 1],
        h_coarse=stats[:, 3],
        thetas=thetas,
        acceptance_rate=accepted_after / max(n_iters - n_burnin, 1),
        n_burnin=n_burnin,
    )


def ml_pmmh_estimate(
    model: ParamModel,
    schedule: LevelSchedule,
    phi: Callable[[np.ndarray, np.ndarray], float],
    n_particles: int,
    stream: RngStream,
    proposal_scale: float = 0.2,
    burnin_fraction: float = 0.2,
    trajectory_mode: str = "traced",
) -> EstimatorReport:
    """Telescoped posterior-expectation estimate across discretization levels.

    Level 1 runs a plain PMMH chain whose kept states average
    phi(theta, trajectory); each level l >= 2 adds an independent
    difference-chain increment.  Chain lengths come from the schedule, so
    planned cost is the usual sum of N_l * 2**(l * zeta).
    """
    if schedule.max_level < 2:
        raise ValueError("multilevel estimate needs max_level >= 2")
    t0 = time.perf_counter()
    means: list[float] = []
    variances: list[float] = []

    n1 = schedule.n_at(1)
    burn1 = int(burnin_fraction * n1)
    base = pmmh_chain(
        model,
        LevelIndex(1),
        n_particles,
        n1,
        stream.split(1),
        proposal_scale=proposal_scale,
        adapt=True,
        n_burnin=burn1,
    )
    base_vals = np.array(
        [phi(base.thetas[i], base.trajectories[i]) for i in range(burn1, n1)]
    )
    means.append(float(base_vals.mean()))
    variances.append(float(base_vals.var(ddof=1)) if base_vals.size > 1 else 0.0)

    for l in range(2, schedule.max_level + 1):
        n_l = schedule.n_at(l)
        diff = ml_pmmh_difference(
            model,
            l,
            n_particles,
            n_l,
            phi,
            stream.split(l),
            proposal_scale=proposal_scale,
            adapt=True,
            n_burnin=int(burnin_fraction * n_l),
            trajectory_mode=trajectory_mode,
        )
        means.append(diff.estimate)
        contrib = diff.h_fine[diff.kept_slice]
        variances.append(float(contrib.var(ddof=1)) if contrib.size > 1 else 0.0)

    return EstimatorReport(
        value=float(sum(means)),
        per_level_means=means,
        per_level_variances=variances,
        total_cost=schedule.total_cost,
        wall_seconds=time.perf_counter() - t0,
        seed=stream.seed,
    )
