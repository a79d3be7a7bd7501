"""Perturbed-observation ensemble Kalman filter and its multilevel variant.

The multilevel filter keeps one plain ensemble at level 1 plus coupled
(fine, coarse) pair ensembles for l >= 2.  Each assimilation step forms the
telescoped multilevel sample covariance over all ensembles, computes a
single shared gain from its positive semi-definite modification, applies
the same affine update (same gain, pair-shared perturbed observation) to
both members of every pair, and then propagates pairs through the coupled
unit-interval kernel.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import LevelSchedule
from .rng import RngStream
from .sde import CoupledState, LevelIndex, SdeModel, coupled_transition, simulate_unit_interval


@dataclass
class LinearObsModel:
    """Linear-Gaussian observation operator y = H u + N(0, Gamma)."""

    H: np.ndarray
    Gamma: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.Gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if not np.allclose(self.Gamma, self.Gamma.T):
            raise ValueError("Gamma must be symmetric")
        # positive definiteness: Cholesky must succeed
        self.gamma_chol = np.linalg.cholesky(self.Gamma)

    @property
    def n_obs(self) -> int:
        return self.observations.shape[0]


@dataclass
class EnsembleState:
    """Ensemble members with their unbiased sample statistics."""

    members: np.ndarray  # (N, d)

    def __post_init__(self):
        self.members = np.atleast_2d(np.asarray(self.members, dtype=float))
        if self.members.shape[0] < 2:
            raise ValueError("need at least 2 ensemble members")

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    @property
    def covariance(self) -> np.ndarray:
        centered = self.members - self.mean
        return centered.T @ centered / (self.members.shape[0] - 1)


def _gain(C: np.ndarray, C_inner: np.ndarray, obs: LinearObsModel) -> np.ndarray:
    """K = C H^T (H C_inner H^T + Gamma)^{-1} via Cholesky."""
    S = obs.H @ C_inner @ obs.H.T + obs.Gamma
    chol = np.linalg.cholesky(S)
    HC = obs.H @ C.T
    return np.linalg.solve(chol.T, np.linalg.solve(chol, HC)).T


def enkf_step(
    sde: SdeModel,
    obs: LinearObsModel,
    ensemble: EnsembleState,
    level: LevelIndex,
    y: np.ndarray,
    stream: RngStream,
) -> EnsembleState:
    """One predict/analysis cycle of the perturbed-observation filter.

    Members are propagated through the level-l unit-interval kernel; the
    gain uses the unbiased prediction sample covariance; every member is
    updated against its own observation copy perturbed by N(0, Gamma).
    """
    predicted = simulate_unit_interval(sde, level, ensemble.members, stream)
    pred = EnsembleState(predicted)
    K = _gain(pred.covariance, pred.covariance, obs)
    N = predicted.shape[0]
    noise = stream.generator.standard_normal((N, obs.H.shape[0])) @ obs.gamma_chol.T
    perturbed = np.atleast_1d(y)[None, :] + noise
    analysis = predicted + (perturbed - predicted @ obs.H.T) @ K.T
    return EnsembleState(analysis)


def enkf_run(
    sde: SdeModel,
    obs: LinearObsModel,
    level: LevelIndex,
    N: int,
    stream: RngStream,
) -> list[EnsembleState]:
    """Run the filter over all observations; returns analysis ensembles."""
    members = np.broadcast_to(sde.initial_state, (N, sde.dim)).copy()
    state = EnsembleState(members)
    out = []
    for k in range(obs.n_obs):
        state = enkf_step(sde, obs, state, level, obs.observations[k], stream)
        out.append(state)
    return out


def ml_covariance(
    level1_members: np.ndarray,
    pair_members: Sequence[tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Telescoped multilevel sample covariance.

    Level-1 term: raw second moment minus outer product of the mean.  Each
    pair level adds the fine-minus-coarse difference of raw second moments,
    minus the fine mean outer product, plus the coarse one.  Levels are
    summed in ascending order so the result is bit-stable.
    """
    u1 = np.atleast_2d(np.asarray(level1_members, dtype=float))
    n1 = u1.shape[0]
    m1 = u1.mean(axis=0)
    C = u1.T @ u1 / n1 - np.outer(m1, m1)
    for fine, coarse in pair_members:
        f = np.atleast_2d(np.asarray(fine, dtype=float))
        c = np.atleast_2d(np.asarray(coarse, dtype=float))
        if f.shape != c.shape:
            raise ValueError("pair ensembles must have matching shapes")
        nl = f.shape[0]
        mf = f.mean(axis=0)
        mc = c.mean(axis=0)
        C = C + (f.T @ f - c.T @ c) / nl - np.outer(mf, mf) + np.outer(mc, mc)
    return C


def psd_modification(C: np.ndarray, sym_tol: float = 1e-8) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by eigenvalue clipping.

    This is the Frobenius-nearest PSD matrix.  Inputs that are asymmetric
    beyond ``sym_tol`` (relative to their magnitude) are rejected; tiny
    asymmetries are symmetrized first.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    scale = max(1.0, float(np.abs(C).max()))
    if np.abs(C - C.T).max() > sym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    sym = 0.5 * (C + C.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if np.all(eigvals >= 0):
        return sym
    clipped = np.clip(eigvals, 0.0, None)
    return (eigvecs * clipped) @ eigvecs.T


@dataclass
class MlEnkfResult:
    """Per-step multilevel mean/covariance estimates and planned cost."""

    ml_means: np.ndarray        # (n_obs, d)
    ml_covariances: np.ndarray  # (n_obs, d, d)
    level_means: np.ndarray     # (n_obs, L, d): level-1 mean then pair differences
    total_cost: float
    wall_seconds: float
    seed: int


def mlenkf_run(
    sde: SdeModel,
    obs: LinearObsModel,
    schedule: LevelSchedule,
    stream: RngStream,
    gap_check_tol: float = 1e-10,
) -> MlEnkfResult:
    """Multilevel ensemble Kalman filter over a planned schedule.

    Per step: (i) multilevel covariance over the prediction ensembles,
    (ii) shared gain from its PSD modification, (iii) analysis with the
    same gain and pair-shared perturbed observations, (iv) coupled
    prediction.  The affine analysis must map each pair gap through
    (I - K H); this identity is asserted at ``gap_check_tol`` every step.
    """
    if schedule.max_level < 2:
        raise ValueError("multilevel filter needs max_level >= 2")
    t0 = time.perf_counter()
    L = schedule.max_level
    d = sde.dim
    n = obs.n_obs
    I = np.eye(d)

    streams = {l: stream.split(l) for l in range(1, L + 1)}
    u0 = sde.initial_state

    level1 = simulate_unit_interval(
        sde, LevelIndex(1), np.broadcast_to(u0, (schedule.n_at(1), d)).copy(), streams[1]
    )
    pairs: dict[int, CoupledState] = {}
    for l in range(2, L + 1):
        start = np.broadcast_to(u0, (schedule.n_at(l), d)).copy()
        pairs[l] = coupled_transition(sde, CoupledState(start, start.copy()), LevelIndex(l), streams[l])

    ml_means = np.zeros((n, d))
    ml_covs = np.zeros((n, d, d))
    level_means = np.zeros((n, L, d))

    for k in range(n):
        y = obs.observations[k]
        C_ml = ml_covariance(level1, [(pairs[l].fine, pairs[l].coarse) for l in range(2, L + 1)])
        C_plus = psd_modification(C_ml)
        K = _gain(C_ml, C_plus, obs)
        IKH = I - K @ obs.H

        noise1 = streams[1].generator.standard_normal((level1.shape[0], obs.H.shape[0]))
        perturbed1 = y[None, :] + noise1 @ obs.gamma_chol.T
        level1 = level1 @ IKH.T + perturbed1 @ K.T

        for l in range(2, L + 1):
            pair = pairs[l]
            gap_before = pair.fine - pair.coarse
            noise = streams[l].generator.standard_normal((pair.fine.shape[0], obs.H.shape[0]))
            perturbed = y[None, :] + noise @ obs.gamma_chol.T
            fine = pair.fine @ IKH.T + perturbed @ K.T
            coarse = pair.coarse @ IKH.T + perturbed @ K.T
            gap_after = fine - coarse
            expected_gap = gap_before @ IKH.T
            if np.max(np.abs(gap_after - expected_gap)) > gap_check_tol:
                raise AssertionError("analysis broke the pair-gap linearity identity")
            pairs[l] = CoupledState(fine, coarse)

        level_means[k, 0] = level1.mean(axis=0)
        for l in range(2, L + 1):
            level_means[k, l - 1] = pairs[l].fine.mean(axis=0) - pairs[l].coarse.mean(axis=0)
        ml_means[k] = level_means[k].sum(axis=0)
        ml_covs[k] = ml_covariance(level1, [(pairs[l].fine, pairs[l].coarse) for l in range(2, L + 1)])

        if k < n - 1:
            level1 = simulate_unit_interval(sde, LevelIndex(1), level1, streams[1])
            for l in range(2, L + 1):
                pairs[l] = coupled_transition(sde, pairs[l], LevelIndex(l), streams[l])

    return MlEnkfResult(
        ml_means=ml_means,
        ml_covariances=ml_covs,
        level_means=level_means,
        total_cost=n * schedule.total_cost,
        wall_seconds=time.perf_counter() - t0,
        seed=stream.seed,
    )
