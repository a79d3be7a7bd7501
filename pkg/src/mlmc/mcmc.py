"""Random-walk Metropolis-Hastings, standalone and as SMC mutation kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .rng import RngStream

#: canonical random-walk acceptance target
TARGET_ACCEPTANCE = 0.234


@dataclass
class LogTarget:
    """Unnormalized log-density on R^dim; -inf marks excluded regions."""

    log_density: Callable[[np.ndarray], float]
    dim: int


@dataclass
class MhState:
    """Current chain position with its cached log-density and counters."""

    current: np.ndarray
    log_density_current: float
    accepted_count: int = 0
    proposed_count: int = 0

    @classmethod
    def initialize(cls, target: LogTarget, position: np.ndarray) -> "MhState":
        position = np.atleast_1d(np.asarray(position, dtype=float))
        value = float(target.log_density(position))
        if not np.isfinite(value):
            raise ValueError("initial position has non-finite log-density")
        return cls(current=position, log_density_current=value)


ProposalScale = Union[float, np.ndarray]


def _propose(current: np.ndarray, scale: ProposalScale, stream: RngStream) -> np.ndarray:
    z = stream.generator.standard_normal(current.shape)
    if np.isscalar(scale) or np.asarray(scale).ndim == 0:
        return current + float(scale) * z
    cov = np.asarray(scale, dtype=float)
    return current + np.linalg.cholesky(cov) @ z


def rwmh_step(
    target: LogTarget,
    state: MhState,
    proposal_scale: ProposalScale,
    stream: RngStream,
) -> MhState:
    """One Metropolis step with a centered Gaussian proposal.

    Accepts with probability min(1, exp(delta log-density)); a proposal
    landing on -inf (or NaN) log-density is always rejected.
    """
    proposal = _propose(state.current, proposal_scale, stream)
    log_dens = float(target.log_density(proposal))
    log_u = math.log(stream.generator.random())
    if np.isfinite(log_dens) and log_u < log_dens - state.log_density_current:
        return MhState(
            current=proposal,
            log_density_current=log_dens,
            accepted_count=state.accepted_count + 1,
            proposed_count=state.proposed_count + 1,
        )
    return replace(state, proposed_count=state.proposed_count + 1)


@dataclass
class ChainResult:
    samples: np.ndarray        # (n_steps, dim), burn-in prefix included
    acceptance_rate: float     # measured after burn-in
    scale: float               # proposal scale in force after burn-in
    n_burnin: int

    @property
    def kept(self) -> np.ndarray:
        return self.samples[self.n_burnin:]


def rwmh_chain(
    target: LogTarget,
    init: np.ndarray,
    n_steps: int,
    proposal_scale: float,
    stream: RngStream,
    adapt: bool = False,
    n_burnin: int = 0,
) -> ChainResult:
    """Run a random-walk chain, optionally tuning the scale during burn-in.

    Adaptation nudges log(scale) toward the 0.234 acceptance target by
    stochastic approximation and freezes it after ``n_burnin`` steps, so
    the post-burn-in chain is a fixed Markov kernel.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if n_burnin >= n_steps:
        raise ValueError("burn-in must be shorter than the chain")
    state = MhState.initialize(target, init)
    scale = float(proposal_scale)
    log_scale = math.log(scale)
    samples = np.zeros((n_steps, state.current.shape[0]))
    accepted_after = 0
    for i in range(n_steps):
        before = state.accepted_count
        state = rwmh_step(target, state, scale, stream)
        samples[i] = state.current
        if adapt and i < n_burnin:
            gamma = (i + 1.0) ** -0.6
            log_scale += gamma * ((state.accepted_count - before) - TARGET_ACCEPTANCE)
            scale = math.exp(log_scale)
        if i >= n_burnin:
            accepted_after += state.accepted_count - before
    kept_steps = n_steps - n_burnin
    return ChainResult(
        samples=samples,
        acceptance_rate=accepted_after / kept_steps,
        scale=scale,
        n_burnin=n_burnin,
    )


def batch_means_se(samples: np.ndarray, n_batches: int = 20) -> float:
    """Batch-means standard error of the mean of a correlated sequence."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 2 * n_batches:
        n_batches = max(2, len(x) // 2)
    batch = len(x) // n_batches
    means = x[: n_batches * batch].reshape(n_batches, batch).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
