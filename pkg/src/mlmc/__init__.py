"""Multilevel Monte Carlo estimators for coupled SDE discretizations,
sequential samplers, particle filters, particle MCMC and ensemble Kalman
filtering, plus an experiment harness with oracle-backed error accounting."""

from .engine import (
    EstimatorReport,
    LevelSchedule,
    RateParams,
    allocate_samples,
    allocate_samples_covariance,
    choose_max_level,
    fit_loglog_slope,
    fit_rates,
    mc_estimate,
    mlmc_estimate,
)
from .rng import ProbabilityVector, RngStream, categorical_sample, gaussian_vector
from .sde import (
    CoupledState,
    LevelIndex,
    SdeModel,
    coupled_transition,
    euler_step,
    gbm_model,
    langevin_model,
    make_model,
    ou_model,
    simulate_unit_interval,
)

__all__ = [
    "CoupledState",
    "EstimatorReport",
    "LevelIndex",
    "LevelSchedule",
    "ProbabilityVector",
    "RateParams",
    "RngStream",
    "SdeModel",
    "allocate_samples",
    "allocate_samples_covariance",
    "categorical_sample",
    "choose_max_level",
    "coupled_transition",
    "euler_step",
    "fit_loglog_slope",
    "fit_rates",
    "gaussian_vector",
    "gbm_model",
    "langevin_model",
    "make_model",
    "mc_estimate",
    "mlmc_estimate",
    "ou_model",
    "simulate_unit_interval",
]

__version__ = "0.1.0"
