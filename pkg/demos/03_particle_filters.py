"""Bootstrap filtering against the exact Kalman recursion, then the
multilevel filter with maximal-coupling resampling."""
import numpy as np

from mlmc.engine import RateParams, allocate_samples
from mlmc.kalman import kalman_filter, ou_state_space
from mlmc.particle_filter import HmmModel, linear_gaussian_obs, mlpf_run, particle_filter_run, simulate_hmm_data
from mlmc.rng import RngStream
from mlmc.sde import LevelIndex, ou_model


def main():
    root = RngStream(23)
    sde = ou_model(0.5, 0.5, 1.0)
    H, R = np.array([[1.0]]), np.array([[0.04]])
    n_obs = 12
    _, ys = simulate_hmm_data(sde, LevelIndex(10), H, R, n_obs, root.split(1))
    hmm = HmmModel(sde=sde, obs_log_density=linear_gaussian_obs(H, R), observations=ys)

    level = 4
    oracle = kalman_filter(ou_state_space(0.5, 0.5, 1.0, 0.04, 1.0, level_steps=2 ** level), ys)
    pf = particle_filter_run(hmm, LevelIndex(level), 2000, root.split(2))
    print(f"bootstrap filter, level {level}, 2000 particles")
    print(f"{'step':>4} {'y':>8} {'pf mean':>9} {'kalman':>9}")
    estimates = pf.estimates(lambda u: u[:, 0])
    for k in range(n_obs):
        print(f"{k + 1:>4} {ys[k, 0]:>8.3f} {estimates[k]:>9.4f} {oracle.filt_means[k, 0]:>9.4f}")
    print(f"log marginal likelihood: filter {pf.log_z:.4f}, exact {oracle.log_likelihood:.4f}")

    schedule = allocate_samples(0.05, RateParams(1.0, 0.5, 1.0), 5, scale=0.5)
    ml = mlpf_run(hmm, schedule, lambda u: u[:, 0], root.split(3))
    print(f"\nmultilevel filter, schedule {schedule.samples}")
    print(f"final-step estimate {ml.step_reports[-1].value:.4f} "
          f"(level decomposition {[round(float(m), 4) for m in ml.step_reports[-1].per_level_means]})")
    print(f"planned cost {ml.step_reports[-1].total_cost:.0f} cost units")


if __name__ == "__main__":
    main()
