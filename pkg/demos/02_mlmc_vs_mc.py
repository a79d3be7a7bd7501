"""Cost-versus-accuracy sweep: plain Monte Carlo against the telescoped estimator.

Estimates E[U_1] for geometric Brownian motion (closed form available) over
a grid of error targets and prints the planned cost each method needs, plus
the fitted cost exponents.
"""
import math

import numpy as np

from mlmc.engine import RateParams, allocate_samples, choose_max_level, fit_loglog_slope, mc_estimate, mlmc_estimate
from mlmc.rng import RngStream
from mlmc.sde import LevelIndex, gbm_model, simulate_unit_interval, terminal_value_samplers

EPSILONS = [0.1, 0.05, 0.025, 0.0125]


def main():
    model = gbm_model(0.5, 0.5, 1.0)
    truth = math.exp(0.5)
    phi = lambda u: u[:, 0]
    phi_level1, coupled = terminal_value_samplers(model, phi)
    rates = RateParams(alpha=1.0, beta=1.0, zeta=1.0)
    root = RngStream(11)

    print(f"target: E[U_1] = e^0.5 = {truth:.6f}\n")
    print(f"{'eps':>8} {'L':>3} {'mc cost':>12} {'mc err':>10} {'ml cost':>12} {'ml err':>10}")
    mc_costs, ml_costs = [], []
    for i, eps in enumerate(EPSILONS):
        L = choose_max_level(eps, rates.alpha)
        level = LevelIndex(L)

        def sampler(stream, n):
            start = np.ones((n, 1))
            return phi(simulate_unit_interval(model, level, start, stream))

        n_mc = math.ceil(0.8 * eps ** -2)
        mc = mc_estimate(sampler, n_mc, root.split(1, i), cost_per_sample=2.0 ** L)
        schedule = allocate_samples(eps, rates, L, scale=0.8)
        ml = mlmc_estimate(coupled, phi_level1, schedule, root.split(2, i))
        mc_costs.append(mc.total_cost)
        ml_costs.append(ml.total_cost)
        print(
            f"{eps:>8g} {L:>3} {mc.total_cost:>12.0f} {abs(mc.value - truth):>10.4f} "
            f"{ml.total_cost:>12.0f} {abs(ml.value - truth):>10.4f}"
        )

    print(f"\nfitted log cost vs log eps: mc {fit_loglog_slope(EPSILONS, mc_costs):.2f}, "
          f"multilevel {fit_loglog_slope(EPSILONS, ml_costs):.2f}")
    print("(about -3 for plain sampling, about -2 for the telescoped estimator)")


if __name__ == "__main__":
    main()
