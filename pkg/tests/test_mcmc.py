"""Random-walk kernel correctness: acceptance, balance, invariance."""
import math

import numpy as np
import pytest
from scipy import stats

from mlmc.mcmc import LogTarget, MhState, batch_means_se, rwmh_chain, rwmh_step
from mlmc.rng import RngStream


def _std_normal_target(dim=1):
    return LogTarget(lambda u: -0.5 * float(u @ u), dim=dim)


def test_flat_target_always_accepts():
    target = LogTarget(lambda u: 0.0, dim=1)
    state = MhState.initialize(target, np.array([0.0]))
    stream = RngStream(0)
    for _ in range(200):
        state = rwmh_step(target, state, 1.0, stream)
    assert state.accepted_count == state.proposed_count == 200


def test_out_of_support_always_rejected():
    target = LogTarget(lambda u: 0.0 if u[0] <= 0 else -math.inf, dim=1)
    state = MhState.initialize(target, np.array([-1e-9]))
    stream = RngStream(1)
    # huge scale: essentially every proposal lands in the forbidden half-line
    for _ in range(100):
        new = rwmh_step(target, state, 1e6, stream)
        if new.current[0] > 0:
            raise AssertionError("accepted a -inf state")
        state = new


def test_standard_normal_moments():
    target = _std_normal_target()
    result = rwmh_chain(target, np.array([0.0]), 40_000, 2.4, RngStream(3))
    kept = result.samples[:, 0]
    se = batch_means_se(kept)
    assert abs(kept.mean()) < 4 * se
    assert 0.2 <= result.acceptance_rate <= 0.6
    se2 = batch_means_se(kept ** 2)
    assert abs((kept ** 2).mean() - 1.0) < 4 * se2


def test_adaptation_reaches_target_band():
    target = LogTarget(lambda u: -0.5 * float(u @ u), dim=2)
    result = rwmh_chain(
        target, np.zeros(2), 12_000, 15.0, RngStream(4), adapt=True, n_burnin=6_000
    )
    assert 0.15 <= result.acceptance_rate <= 0.35, result.acceptance_rate


def test_single_step_chain():
    target = _std_normal_target()
    result = rwmh_chain(target, np.array([0.5]), 1, 1.0, RngStream(5))
    assert result.samples.shape == (1, 1)


def test_detailed_balance_two_state_toy():
    # narrow Gaussians at -1/+1 with unequal masses; flows i->j and j->i match
    centers = np.array([-1.0, 1.0])
    log_mass = np.array([math.log(0.3), math.log(0.7)])

    def log_density(u):
        z = -0.5 * ((u[0] - centers) / 0.05) ** 2 + log_mass
        m = z.max()
        return m + math.log(np.exp(z - m).sum())

    target = LogTarget(log_density, dim=1)
    result = rwmh_chain(target, np.array([1.0]), 200_000, 2.0, RngStream(6))
    labels = (result.samples[:, 0] > 0).astype(int)
    flow_01 = np.mean((labels[:-1] == 0) & (labels[1:] == 1))
    flow_10 = np.mean((labels[:-1] == 1) & (labels[1:] == 0))
    se = math.sqrt((flow_01 + flow_10) / len(labels))
    assert abs(flow_01 - flow_10) < 4 * se


def test_invariance_from_exact_start():
    # chains started from exact N(0,1) draws stay N(0,1) after k steps
    stream = RngStream(7)
    n_chains, k_steps = 4000, 5
    target = _std_normal_target()
    finals = np.zeros(n_chains)
    for i in range(n_chains):
        start = stream.generator.standard_normal(1)
        state = MhState.initialize(target, start)
        for _ in range(k_steps):
            state = rwmh_step(target, state, 2.4, stream)
        finals[i] = state.current[0]
    fresh = RngStream(8).generator.standard_normal(n_chains)
    _, p_value = stats.ks_2samp(finals, fresh)
    assert p_value > 0.001, p_value


def test_covariance_proposal():
    target = LogTarget(lambda u: -0.5 * float(u @ u), dim=2)
    state = MhState.initialize(target, np.zeros(2))
    out = rwmh_step(target, state, np.diag([0.5, 0.5]), RngStream(9))
    assert out.proposed_count == 1


def test_chain_validates_lengths():
    target = _std_normal_target()
    with pytest.raises(ValueError):
        rwmh_chain(target, np.array([0.0]), 0, 1.0, RngStream(0))
    with pytest.raises(ValueError):
        rwmh_chain(target, np.array([0.0]), 10, 1.0, RngStream(0), n_burnin=10)
