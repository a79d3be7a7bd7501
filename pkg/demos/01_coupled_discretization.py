"""Coupled fine/coarse Euler transitions and their decay rates.

Simulates geometric Brownian motion over one unit interval at a ladder of
dyadic levels, drives each coarse path with the pairwise-summed fine
increments, and tabulates how the mean and variance of the fine-coarse
difference shrink as the mesh refines.
"""
import numpy as np

from mlmc.engine import fit_rates
from mlmc.rng import RngStream
from mlmc.sde import CoupledState, LevelIndex, coupled_transition, gbm_model, ou_model

PAIRS = 50_000


def difference_table(model, label):
    print(f"\n{label}: E[phi(fine) - phi(coarse)] with phi(u) = u, {PAIRS} pairs/level")
    print(f"{'level':>5} {'h':>10} {'|mean diff|':>12} {'var diff':>12}")
    stats = []
    for l in range(3, 9):
        start = np.broadcast_to(model.initial_state, (PAIRS, 1)).copy()
        pair = coupled_transition(
            model, CoupledState(start, start.copy()), LevelIndex(l), RngStream(7).split(l)
        )
        diff = pair.fine[:, 0] - pair.coarse[:, 0]
        stats.append((l, abs(float(diff.mean())), float(diff.var(ddof=1))))
        print(f"{l:>5} {2.0 ** -l:>10.5f} {stats[-1][1]:>12.3e} {stats[-1][2]:>12.3e}")
    alpha_hat, beta_hat = fit_rates(stats)
    print(f"fitted decay exponents: bias ~ h^{alpha_hat:.2f}, variance ~ h^{beta_hat:.2f}")


def main():
    difference_table(gbm_model(0.5, 0.5, 1.0), "multiplicative noise (GBM)")
    difference_table(ou_model(0.5, 0.5, 1.0), "additive noise (mean-reverting)")
    print("\nAdditive noise doubles the variance decay rate, which is what")
    print("lets the multilevel estimator hit the optimal cost regime.")


if __name__ == "__main__":
    main()
