"""Sampler correctness on bridges with closed-form normalizers."""
import math

import numpy as np
import pytest

from mlmc.rng import RngStream
from mlmc.smc_sampler import (
    TargetSequence,
    gaussian_bridge_sequence,
    mlsmc_estimate,
    sampler_cost,
    smc_sampler_run,
    weight_deviation_profile,
)


def _constant_sequence(L, dim=1):
    return TargetSequence(
        log_kappas=[lambda u: -0.5 * u[:, 0] ** 2 for _ in range(L)],
        dim=dim,
        initial_sampler=lambda stream, n: stream.generator.standard_normal((n, dim)),
        mutation_steps=3,
        mutation_scale=1.0,
    )


class TestSmcSamplerRun:
    def test_identical_targets_unit_ratios(self):
        seq = _constant_sequence(4)
        run = smc_sampler_run(seq, [200, 150, 100, 80], RngStream(0))
        np.testing.assert_allclose(run.log_z_ratios, 0.0, atol=1e-12)

    def test_rejects_increasing_schedule(self):
        seq = _constant_sequence(3)
        with pytest.raises(ValueError):
            smc_sampler_run(seq, [100, 150, 100], RngStream(0))

    def test_degeneracy_names_level(self):
        from mlmc.smc_sampler import WeightDegeneracyError

        seq = TargetSequence(
            log_kappas=[
                lambda u: -0.5 * u[:, 0] ** 2,
                lambda u: np.full(len(u), -np.inf),
            ],
            dim=1,
            initial_sampler=lambda stream, n: stream.generator.standard_normal((n, 1)),
        )
        with pytest.raises(WeightDegeneracyError) as err:
            smc_sampler_run(seq, [50, 40], RngStream(1))
        assert err.value.level == 2

    def test_gaussian_bridge_normalizers(self):
        # Z_l = sqrt(2 pi) sigma_l, so Z_l / Z_1 = sigma_l / sigma_1
        sigmas = [2.0, 1.6, 1.3, 1.1]
        seq = gaussian_bridge_sequence(sigmas)
        reps = 40
        finals = np.zeros(reps)
        for r in range(reps):
            run = smc_sampler_run(seq, [600, 500, 400, 300], RngStream(1).split(r))
            finals[r] = math.exp(run.log_z_ratios[-1])
        se = finals.std(ddof=1) / math.sqrt(reps)
        assert abs(finals.mean() - sigmas[-1] / sigmas[0]) < 3 * se

    def test_final_ensemble_second_moment(self):
        sigmas = [2.0, 1.5, 1.2, 1.0]
        seq = gaussian_bridge_sequence(sigmas)
        reps = 30
        m2 = np.zeros(reps)
        for r in range(reps):
            run = smc_sampler_run(seq, [800, 700, 600, 500], RngStream(2).split(r))
            m2[r] = np.mean(run.ensembles[-1][:, 0] ** 2)
        se = m2.std(ddof=1) / math.sqrt(reps)
        assert abs(m2.mean() - sigmas[-1] ** 2) < 4 * se

    def test_nc_product_unbiased(self):
        # the (non-log) product estimator is unbiased for Z_L / Z_1
        sigmas = [1.5, 1.2, 1.0]
        seq = gaussian_bridge_sequence(sigmas)
        reps = 200
        finals = np.zeros(reps)
        for r in range(reps):
            run = smc_sampler_run(seq, [300, 250, 200], RngStream(3).split(r))
            finals[r] = math.exp(run.log_z_ratios[-1])
        se = finals.std(ddof=1) / math.sqrt(reps)
        assert abs(finals.mean() - sigmas[-1] / sigmas[0]) < 3 * se


class TestMlsmcEstimate:
    def test_identical_targets_reduce_to_level_one_mean(self):
        seq = _constant_sequence(4)
        report = mlsmc_estimate(seq, lambda u: u[:, 0] ** 2, [200, 150, 100, 80], RngStream(4))
        # unit weights: SNIS terms equal plain means, differences vanish
        assert all(abs(m) < 1e-12 for m in report.per_level_means[1:])

    def test_two_level_snis_bit_exact(self):
        sigmas = [1.5, 1.0]
        seq = gaussian_bridge_sequence(sigmas)
        n = [64, 64]
        report = mlsmc_estimate(seq, lambda u: u[:, 0] ** 2, n, RngStream(5))
        # recompute by hand on the same particles
        particles = seq.initial_sampler(RngStream(5).split(1), 64)
        log_r = seq.log_kappas[1](particles) - seq.log_kappas[0](particles)
        r = np.exp(log_r - log_r.max())
        phi = particles[:, 0] ** 2
        snis = float(np.sum(r * phi) / np.sum(r))
        assert report.value == snis

    def test_gaussian_bridge_moment_oracle(self):
        sigmas = [2.0, 1.6, 1.3, 1.1, 1.0]
        seq = gaussian_bridge_sequence(sigmas)
        schedule = [1500, 1100, 800, 600, 450]
        reps = 25
        vals = np.zeros(reps)
        for r in range(reps):
            vals[r] = mlsmc_estimate(seq, lambda u: u[:, 0] ** 2, schedule, RngStream(6).split(r)).value
        se = vals.std(ddof=1) / math.sqrt(reps)
        # SNIS terms carry O(1/N) bias; allow a small budget on top of 3 SEs
        assert abs(vals.mean() - sigmas[-1] ** 2) < 3 * se + 0.02

    def test_error_scales_with_population(self):
        # 4x the schedule should cut squared error by ~4x
        sigmas = [2.0, 1.5, 1.2, 1.0]
        seq = gaussian_bridge_sequence(sigmas)
        truth = sigmas[-1] ** 2
        reps = 60
        errs = {}
        for factor, tag in ((1, 7), (4, 8)):
            schedule = [n * factor for n in (300, 240, 180, 140)]
            sq = np.zeros(reps)
            for r in range(reps):
                val = mlsmc_estimate(seq, lambda u: u[:, 0] ** 2, schedule, RngStream(tag).split(r)).value
                sq[r] = (val - truth) ** 2
            errs[factor] = sq.mean()
        ratio = errs[1] / errs[4]
        assert 2.5 <= ratio <= 6.0, ratio


class TestWeightDeviationProfile:
    def test_identical_targets_zero_deviation(self):
        seq = _constant_sequence(3)
        run = smc_sampler_run(seq, [200, 150, 100], RngStream(9))
        profile = weight_deviation_profile(seq, run.ensembles)
        assert all(d.sup < 1e-12 for d in profile)

    def test_bridge_deviation_decays_at_analytic_rate(self):
        # sigma_l^2 = 1 + 2^-l: log kappa_l - log kappa_{l-1} scales with
        # (1/sigma_{l-1}^2 - 1/sigma_l^2)/2 ~ 2^-l, so the profile decays
        # with fitted rate about 1
        L = 7
        sigmas = [math.sqrt(1.0 + 2.0 ** -l) for l in range(1, L + 1)]
        seq = gaussian_bridge_sequence(sigmas)
        run = smc_sampler_run(seq, [3000] * L, RngStream(10))
        profile = weight_deviation_profile(seq, run.ensembles)
        levels = np.array([d.level for d in profile], dtype=float)
        l2 = np.array([d.l2 for d in profile])
        slope = -np.polyfit(levels, np.log2(l2), 1)[0]
        assert slope >= 0.7, slope


def test_sampler_cost_formula():
    assert sampler_cost([10, 5], zeta=1.0, multiplier=2.0) == 10 * 2 * 2 + 5 * 4 * 2
