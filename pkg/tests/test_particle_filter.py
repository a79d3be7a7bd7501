"""Resampling schemes, filter-vs-Kalman checks and the coupled resampler."""
import math

import numpy as np
import pytest
from scipy import stats

from mlmc.kalman import kalman_filter, ou_state_space
from mlmc.particle_filter import (
    CoupledEnsemble,
    HmmModel,
    ParticleDegeneracyError,
    WeightedEnsemble,
    linear_gaussian_obs,
    maximal_coupling_resample,
    mlpf_run,
    multinomial_resample,
    particle_filter_run,
    simulate_hmm_data,
    systematic_resample,
)
from mlmc.engine import RateParams, allocate_samples
from mlmc.rng import ProbabilityVector, RngStream
from mlmc.sde import LevelIndex, ou_model, scalar_sde, simulate_unit_interval


def _toy_linear_model(theta1=0.5, theta2=0.5, u0=1.0, obs_var=0.04, n_obs=10, data_seed=100, data_level=9):
    sde = ou_model(theta1, theta2, u0)
    H = np.array([[1.0]])
    R = np.array([[obs_var]])
    _, ys = simulate_hmm_data(sde, LevelIndex(data_level), H, R, n_obs, RngStream(data_seed))
    hmm = HmmModel(sde=sde, obs_log_density=linear_gaussian_obs(H, R), observations=ys)
    return hmm, ys


def _kalman_at_level(level, ys, theta1=0.5, theta2=0.5, u0=1.0, obs_var=0.04):
    model = ou_state_space(theta1, theta2, 1.0, obs_var, u0, level_steps=2 ** level)
    return kalman_filter(model, ys)


class TestResamplers:
    def test_multinomial_uniform_frequencies(self):
        n = 50_000
        idx = multinomial_resample(np.full(4, 0.25), n, RngStream(1))
        freqs = np.bincount(idx, minlength=4) / n
        np.testing.assert_allclose(freqs, 0.25, atol=0.01)

    def test_multinomial_one_hot(self):
        idx = multinomial_resample(np.array([0.0, 1.0, 0.0]), 100, RngStream(2))
        assert np.all(idx == 1)

    def test_multinomial_offspring_moments(self):
        w = np.array([0.5, 0.3, 0.2])
        N, reps = 20, 10_000
        counts = np.zeros(3)
        stream = RngStream(3)
        for _ in range(reps):
            idx = multinomial_resample(w, N, stream)
            counts += np.bincount(idx, minlength=3)
        expected = N * w * reps
        # binomial CI on total offspring counts
        se = np.sqrt(reps * N * w * (1 - w))
        assert np.all(np.abs(counts - expected) < 4 * se)

    def test_systematic_uniform_exact(self):
        idx = systematic_resample(np.full(5, 0.2), 5, RngStream(4))
        assert sorted(idx.tolist()) == [0, 1, 2, 3, 4]

    def test_systematic_one_hot(self):
        idx = systematic_resample(np.array([0.0, 0.0, 1.0]), 64, RngStream(5))
        assert np.all(idx == 2)

    def test_systematic_count_bound_over_offsets(self):
        # enumeration over a dense offset grid: |count_j - N w_j| < 1 always
        w = np.array([0.37, 0.11, 0.29, 0.23])
        N = 17
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        for offset in np.linspace(0.0, 0.999999, 2001):
            positions = (np.arange(N) + offset) / N
            idx = np.searchsorted(cdf, positions, side="right")
            counts = np.bincount(idx, minlength=4)
            assert np.all(np.abs(counts - N * w) < 1.0)


class TestParticleFilter:
    def test_flat_likelihood_z_exact(self):
        sde = ou_model(0.5, 0.5, 1.0)
        c = 0.37
        hmm = HmmModel(
            sde=sde,
            obs_log_density=lambda states, y: np.full(len(states), math.log(c)),
            observations=np.zeros((6, 1)),
        )
        result = particle_filter_run(hmm, LevelIndex(2), 50, RngStream(6))
        assert result.log_z == pytest.approx(6 * math.log(c), abs=1e-12)
        for ens in result.ensembles:
            np.testing.assert_allclose(ens.normalized_weights.weights, 1.0 / 50)

    def test_filter_means_match_kalman(self):
        level = 4
        hmm, ys = _toy_linear_model(n_obs=10)
        oracle = _kalman_at_level(level, ys)
        runs = 30
        N = 400
        means = np.zeros((runs, 10))
        for r in range(runs):
            result = particle_filter_run(hmm, LevelIndex(level), N, RngStream(7).split(r))
            means[r] = result.estimates(lambda u: u[:, 0])
        se = means.std(axis=0, ddof=1) / math.sqrt(runs)
        gap = np.abs(means.mean(axis=0) - oracle.filt_means[:, 0])
        assert np.all(gap < 3 * se + 1e-3), (gap / se)

    def test_z_unbiased_small(self):
        level = 3
        hmm, ys = _toy_linear_model(n_obs=8)
        oracle = _kalman_at_level(level, ys)
        runs = 60
        zs = np.zeros(runs)
        for r in range(runs):
            result = particle_filter_run(hmm, LevelIndex(level), 300, RngStream(8).split(r))
            zs[r] = math.exp(result.log_z)
        se = zs.std(ddof=1) / math.sqrt(runs)
        assert abs(zs.mean() - math.exp(oracle.log_likelihood)) < 3 * se

    def test_degeneracy_reports_step(self):
        sde = ou_model(0.5, 0.5, 1.0)
        hmm = HmmModel(
            sde=sde,
            obs_log_density=lambda states, y: np.full(len(states), -np.inf if y[0] > 2.5 else 0.0),
            observations=np.array([[0.0], [0.0], [3.0]]),
        )
        with pytest.raises(ParticleDegeneracyError) as exc_info:
            particle_filter_run(hmm, LevelIndex(2), 20, RngStream(9))
        assert exc_info.value.step == 3

    def test_log_domain_stability_long_run(self):
        hmm, _ = _toy_linear_model(n_obs=100)
        result = particle_filter_run(hmm, LevelIndex(3), 200, RngStream(10))
        assert np.isfinite(result.log_z)

    def test_general_proposal_wiring(self):
        # proposal = dynamics with unit claimed densities reduces to the
        # bootstrap filter draw-for-draw on a shared stream
        hmm, _ = _toy_linear_model(n_obs=5)

        def proposal(parents, level, stream):
            states = simulate_unit_interval(hmm.sde, level, parents, stream)
            return states, np.zeros(len(parents))

        proposed = HmmModel(
            sde=hmm.sde,
            obs_log_density=hmm.obs_log_density,
            observations=hmm.observations,
            proposal=proposal,
            log_transition_density=lambda parents, states, level: np.zeros(len(parents)),
        )
        a = particle_filter_run(hmm, LevelIndex(3), 100, RngStream(30))
        b = particle_filter_run(proposed, LevelIndex(3), 100, RngStream(30))
        assert a.log_z == b.log_z
        for ea, eb in zip(a.ensembles, b.ensembles):
            np.testing.assert_array_equal(ea.particles, eb.particles)

    def test_proposal_requires_transition_density(self):
        hmm, _ = _toy_linear_model(n_obs=3)
        with pytest.raises(ValueError):
            HmmModel(
                sde=hmm.sde,
                obs_log_density=hmm.obs_log_density,
                observations=hmm.observations,
                proposal=lambda parents, level, stream: (parents, np.zeros(len(parents))),
            )

    def test_trace_trajectory_shape(self):
        hmm, _ = _toy_linear_model(n_obs=7)
        result = particle_filter_run(hmm, LevelIndex(3), 50, RngStream(11))
        path = result.trace_trajectory(RngStream(12))
        assert path.shape == (7, 1)
        # traced states must appear among stored particles at each step
        for k in range(7):
            assert np.any(np.isclose(result.ensembles[k].particles[:, 0], path[k, 0]))


def _coupling_joint_law(wf, wc):
    """Independent re-derivation of the two-branch mixture's joint law."""
    overlap = np.minimum(wf, wc)
    alpha = overlap.sum()
    joint = np.zeros((len(wf), len(wc)))
    if alpha > 0:
        joint += alpha * np.diag(overlap / alpha)
    if alpha < 1:
        res_f = (wf - overlap) / (1 - alpha)
        res_c = (wc - overlap) / (1 - alpha)
        joint += (1 - alpha) * np.outer(res_f, res_c)
    return joint


class TestMaximalCouplingResample:
    def test_identical_weights_always_meet(self):
        w = np.array([0.2, 0.5, 0.3])
        idx_f, idx_c = maximal_coupling_resample(w, w.copy(), 5000, RngStream(13))
        np.testing.assert_array_equal(idx_f, idx_c)

    def test_disjoint_supports_never_meet(self):
        idx_f, idx_c = maximal_coupling_resample(
            np.array([1.0, 0.0]), np.array([0.0, 1.0]), 2000, RngStream(14)
        )
        assert np.all(idx_f == 0) and np.all(idx_c == 1)

    def test_worked_joint_law(self):
        # wf = (.7, .3), wc = (.4, .6): alpha = .7; the brute-force law is
        # P(0,0) = .4, P(1,1) = .3, P(0,1) = .3, P(1,0) = 0
        wf = np.array([0.7, 0.3])
        wc = np.array([0.4, 0.6])
        joint = _coupling_joint_law(wf, wc)
        np.testing.assert_allclose(joint, [[0.4, 0.3], [0.0, 0.3]], atol=1e-15)
        n = 100_000
        idx_f, idx_c = maximal_coupling_resample(wf, wc, n, RngStream(15))
        for i in range(2):
            for j in range(2):
                freq = np.mean((idx_f == i) & (idx_c == j))
                se = math.sqrt(max(joint[i, j] * (1 - joint[i, j]), 1e-12) / n)
                assert abs(freq - joint[i, j]) < 3 * se + 1e-9, (i, j)

    def test_marginals_chi_square(self):
        rng = np.random.default_rng(0)
        n = 100_000
        for trial in range(10):
            wf = rng.dirichlet(np.ones(5))
            wc = rng.dirichlet(np.ones(5))
            idx_f, idx_c = maximal_coupling_resample(wf, wc, n, RngStream(16).split(trial))
            for idx, w in ((idx_f, wf), (idx_c, wc)):
                counts = np.bincount(idx, minlength=5)
                _, p = stats.chisquare(counts, f_exp=n * w)
                assert p > 0.001, (trial, p)

    def test_meeting_probability_lower_bound(self):
        rng = np.random.default_rng(1)
        n = 50_000
        for trial in range(5):
            wf = rng.dirichlet(np.ones(4))
            wc = rng.dirichlet(np.ones(4))
            alpha = np.minimum(wf, wc).sum()
            idx_f, idx_c = maximal_coupling_resample(wf, wc, n, RngStream(17).split(trial))
            meet = np.mean(idx_f == idx_c)
            se = math.sqrt(alpha * (1 - alpha) / n)
            assert meet >= alpha - 3 * se


class TestMlpf:
    def test_brownian_lanes_coincide(self):
        # zero drift, unit diffusion: the coupling makes both lanes the same
        # Brownian sum, so every difference term vanishes to round-off
        sde = scalar_sde(lambda u: 0.0 * u, lambda u: np.ones_like(u), 0.0)
        hmm = HmmModel(
            sde=sde,
            obs_log_density=linear_gaussian_obs([[1.0]], [[1.0]]),
            observations=np.zeros((5, 1)),
        )
        schedule = allocate_samples(0.2, RateParams(1.0, 0.5, 1.0), 3, scale=2.0)
        result = mlpf_run(hmm, schedule, lambda u: u[:, 0], RngStream(18))
        assert np.max(np.abs(result.per_level_step_means[1:])) < 1e-10

    def test_same_level_lanes_have_zero_mean_difference(self):
        # both lanes at the same level with independent noise: the weighted
        # difference has expectation zero by exchangeability
        hmm, _ = _toy_linear_model(n_obs=6)
        level = LevelIndex(3)
        reps, N = 40, 100
        finals = np.zeros(reps)
        for r in range(reps):
            stream = RngStream(19).split(r)
            fine = np.ones((N, 1))
            coarse = np.ones((N, 1))
            for k in range(6):
                fine = simulate_unit_interval(hmm.sde, level, fine, stream)
                coarse = simulate_unit_interval(hmm.sde, level, coarse, stream)
                lw_f = hmm.obs_log_density(fine, hmm.observations[k])
                lw_c = hmm.obs_log_density(coarse, hmm.observations[k])
                wf = ProbabilityVector.from_log_weights(lw_f).weights
                wc = ProbabilityVector.from_log_weights(lw_c).weights
                if k < 5:
                    idx_f, idx_c = maximal_coupling_resample(wf, wc, N, stream)
                    fine, coarse = fine[idx_f], coarse[idx_c]
            finals[r] = np.dot(wf, fine[:, 0]) - np.dot(wc, coarse[:, 0])
        se = finals.std(ddof=1) / math.sqrt(reps)
        assert abs(finals.mean()) < 3 * se

    def test_mlpf_matches_kalman_at_finest_level(self):
        hmm, ys = _toy_linear_model(n_obs=8)
        L = 4
        oracle = _kalman_at_level(L, ys)
        schedule = allocate_samples(0.05, RateParams(1.0, 0.5, 1.0), L, scale=0.5)
        reps = 15
        finals = np.zeros(reps)
        for r in range(reps):
            result = mlpf_run(hmm, schedule, lambda u: u[:, 0], RngStream(20).split(r))
            finals[r] = result.step_reports[-1].value
        se = finals.std(ddof=1) / math.sqrt(reps)
        assert abs(finals.mean() - oracle.filt_means[-1, 0]) < 3 * se + 2e-3

    def test_per_step_reports_telescope(self):
        hmm, _ = _toy_linear_model(n_obs=5)
        schedule = allocate_samples(0.1, RateParams(1.0, 0.5, 1.0), 3, scale=0.5)
        result = mlpf_run(hmm, schedule, lambda u: u[:, 0], RngStream(21))
        for k, report in enumerate(result.step_reports):
            assert report.value == pytest.approx(sum(report.per_level_means), abs=1e-12)
            assert report.total_cost == pytest.approx((k + 1) * schedule.total_cost)


def test_weighted_ensemble_estimate():
    ens = WeightedEnsemble(
        particles=np.array([[1.0], [3.0]]),
        log_weights=np.log(np.array([0.25, 0.75])),
    )
    assert ens.estimate(lambda u: u[:, 0]) == pytest.approx(0.25 * 1 + 0.75 * 3)


def test_coupled_ensemble_difference():
    ens = CoupledEnsemble(
        fine_particles=np.array([[2.0], [4.0]]),
        coarse_particles=np.array([[1.0], [1.0]]),
        fine_log_weights=np.zeros(2),
        coarse_log_weights=np.log(np.array([0.5, 0.5])),
    )
    assert ens.difference_estimate(lambda u: u[:, 0]) == pytest.approx(3.0 - 1.0)
