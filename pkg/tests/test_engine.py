"""Level planning, sample allocation and the telescoping estimator."""
import math

import numpy as np
import pytest

from mlmc.engine import (
    EstimatorReport,
    RateParams,
    allocate_samples,
    allocate_samples_covariance,
    choose_max_level,
    fit_loglog_slope,
    fit_rates,
    mc_estimate,
    mlmc_estimate,
)
from mlmc.rng import RngStream
from mlmc.sde import LevelIndex, gbm_model, simulate_unit_interval, terminal_value_samplers


class TestChooseMaxLevel:
    def test_half(self):
        assert choose_max_level(0.5, 1.0) == 1

    def test_power_of_two(self):
        assert choose_max_level(2.0 ** -4, 1.0) == 4

    def test_alpha_halves_level(self):
        assert choose_max_level(2.0 ** -4, 2.0) == 2

    def test_rejects_bad_epsilon(self):
        for eps in (0.0, 1.0, 1.5, -0.1):
            with pytest.raises(ValueError):
                choose_max_level(eps, 1.0)


class TestAllocateSamples:
    def test_euler_case_constant_K(self):
        # beta = zeta: every h-power is 1, so K_L = L
        rates = RateParams(1.0, 1.0, 1.0)
        schedule = allocate_samples(0.1, rates, 4, scale=1.0)
        assert schedule.lagrange_constant == pytest.approx(4.0)
        expected = [math.ceil(100.0 * 2.0 ** (-l) * 4.0) for l in range(1, 5)]
        assert schedule.samples == expected

    def test_worked_example(self):
        # beta=2, zeta=1, L=3, eps=0.1: K_L = 2^-.5 + 2^-1 + 2^-1.5,
        # N_1 = ceil(100 * 2^-1.5 * K_L) = 56 (recomputed independently here)
        K_L = 2.0 ** -0.5 + 2.0 ** -1 + 2.0 ** -1.5
        n1_expected = math.ceil(100.0 * 2.0 ** -1.5 * K_L)
        assert n1_expected == 56
        schedule = allocate_samples(0.1, RateParams(1.0, 2.0, 1.0), 3, scale=1.0)
        assert schedule.lagrange_constant == pytest.approx(K_L)
        assert schedule.samples[0] == 56

    def test_non_increasing(self):
        schedule = allocate_samples(0.05, RateParams(1.0, 1.0, 1.0), 6)
        assert all(a >= b for a, b in zip(schedule.samples, schedule.samples[1:]))

    def test_minimum_two_samples(self):
        schedule = allocate_samples(0.9, RateParams(1.0, 1.0, 1.0), 8, scale=1e-6)
        assert all(n >= 2 for n in schedule.samples)

    def test_total_cost(self):
        schedule = allocate_samples(0.1, RateParams(1.0, 1.0, 1.0), 3)
        expected = sum(n * 2.0 ** l for l, n in enumerate(schedule.samples, start=1))
        assert schedule.total_cost == expected


def test_allocate_covariance_matches_stated_cost_scaling():
    # planned cost should equal eps^-2 * K~_L^(3/2) up to ceiling effects
    rates = RateParams(1.0, 1.0, 1.0)
    eps = 0.02
    L = 6
    schedule = allocate_samples_covariance(eps, rates, L, scale=1.0)
    K_sqrt = sum(2.0 ** (-l * 0.0) for l in range(1, L + 1))  # (beta-zeta)/3 = 0
    expected_cost = eps ** -2 * K_sqrt ** 3
    assert schedule.total_cost == pytest.approx(expected_cost, rel=0.02)


class TestMcEstimate:
    def test_constant_sampler(self):
        report = mc_estimate(lambda s, n: np.full(n, 3.25), 100, RngStream(0))
        assert report.value == 3.25
        assert report.per_level_variances == [0.0]

    def test_normal_sampler_clt(self):
        n = 10 ** 5
        report = mc_estimate(lambda s, n: s.generator.standard_normal(n), n, RngStream(1))
        assert abs(report.value) < 4.0 / math.sqrt(n)

    def test_rejects_single_sample(self):
        with pytest.raises(ValueError):
            mc_estimate(lambda s, n: np.zeros(n), 1, RngStream(0))


class TestMlmcEstimate:
    def test_identical_lanes_reduce_to_level_one(self):
        schedule = allocate_samples(0.1, RateParams(1.0, 1.0, 1.0), 4, scale=0.2)

        def coupled(level, stream, n):
            vals = stream.generator.standard_normal(n)
            return vals, vals.copy()

        def phi1(stream, n):
            return RngStream(99).generator.standard_normal(n)

        report = mlmc_estimate(coupled, phi1, schedule, RngStream(5))
        base = phi1(None, schedule.samples[0])
        assert report.value == pytest.approx(float(base.mean()))
        assert all(m == 0.0 for m in report.per_level_means[1:])

    def test_level_counter_telescopes(self):
        schedule = allocate_samples(0.1, RateParams(1.0, 1.0, 1.0), 5, scale=0.1)
        report = mlmc_estimate(
            lambda level, stream, n: (np.full(n, float(level)), np.full(n, float(level - 1))),
            lambda stream, n: np.ones(n),
            schedule,
            RngStream(0),
        )
        assert report.value == pytest.approx(5.0)

    def test_gbm_oracle(self):
        # E[U_1] = e^0.05 in closed form; tolerance is 3*(std + bias budget)
        model = gbm_model(0.05, 0.2, 1.0)
        phi1, coupled = terminal_value_samplers(model, lambda u: u[:, 0])
        eps = 0.05
        rates = RateParams(1.0, 1.0, 1.0)
        L = choose_max_level(eps, rates.alpha)
        schedule = allocate_samples(eps, rates, L, scale=0.1)
        report = mlmc_estimate(coupled, phi1, schedule, RngStream(31))
        se = math.sqrt(sum(v / n for v, n in zip(report.per_level_variances, schedule.samples)))
        bias_budget = math.exp(0.05) * (0.05 ** 2 / 2) * 2.0 ** -L
        assert abs(report.value - math.exp(0.05)) < 3 * (se + bias_budget)

    def test_unbiasedness_vs_single_level(self):
        # shared-marginal coupled sampler: MLMC agrees with big single-level MC
        model = gbm_model(0.5, 0.5, 1.0)
        phi1, coupled = terminal_value_samplers(model, lambda u: u[:, 0])
        rates = RateParams(1.0, 1.0, 1.0)
        L = 5
        schedule = allocate_samples(0.02, rates, L, scale=1.0)
        ml = mlmc_estimate(coupled, phi1, schedule, RngStream(77))
        n_mc = 400_000

        def sampler(stream, n):
            start = np.ones((n, 1))
            return simulate_unit_interval(model, LevelIndex(L), start, stream)[:, 0]

        mc = mc_estimate(sampler, n_mc, RngStream(78))
        se_ml = math.sqrt(sum(v / n for v, n in zip(ml.per_level_variances, schedule.samples)))
        se_mc = math.sqrt(mc.per_level_variances[0] / n_mc)
        assert abs(ml.value - mc.value) < 3 * math.hypot(se_ml, se_mc)

    def test_report_invariants(self):
        schedule = allocate_samples(0.2, RateParams(1.0, 1.0, 1.0), 3, scale=0.5)
        report = mlmc_estimate(
            lambda level, stream, n: (stream.generator.standard_normal(n), np.zeros(n)),
            lambda stream, n: stream.generator.standard_normal(n),
            schedule,
            RngStream(2),
        )
        assert report.value == pytest.approx(sum(report.per_level_means), abs=1e-12)
        assert report.total_cost == schedule.total_cost


class TestFitRates:
    def test_exact_alpha(self):
        stats = [(l, 2.0 ** -l, 1.0) for l in range(2, 7)]
        alpha, _ = fit_rates(stats)
        assert alpha == pytest.approx(1.0, abs=1e-12)

    def test_exact_beta(self):
        stats = [(l, 1.0, 4.0 ** -l) for l in range(2, 7)]
        _, beta = fit_rates(stats)
        assert beta == pytest.approx(2.0, abs=1e-12)

    def test_needs_three_levels(self):
        with pytest.raises(ValueError):
            fit_rates([(1, 0.5, 0.5), (2, 0.25, 0.25)])

    def test_warns_and_skips_nonpositive(self):
        stats = [(l, 2.0 ** -l, 4.0 ** -l) for l in range(1, 6)] + [(6, 2.0 ** -6, 0.0)]
        with pytest.warns(UserWarning):
            _, beta = fit_rates(stats)
        assert beta == pytest.approx(2.0, abs=1e-9)


def test_fit_loglog_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert fit_loglog_slope(x, x ** -1.5) == pytest.approx(-1.5, abs=1e-12)


def test_estimator_report_checks_mean_sum():
    with pytest.raises(ValueError):
        EstimatorReport(
            value=1.0,
            per_level_means=[0.4, 0.4],
            per_level_variances=[0.0, 0.0],
            total_cost=1.0,
            wall_seconds=0.0,
            seed=0,
        )
