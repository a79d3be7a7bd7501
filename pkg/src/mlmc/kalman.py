"""Exact Kalman recursion for linear-Gaussian state-space models.

Serves as the independent oracle for the particle/ensemble filters: given
the exactly-discretized linear dynamics it returns filtering moments and
the marginal likelihood through the prediction-error decomposition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class LinearStateSpace:
    """x_k = F x_{k-1} + N(0, Q);  y_k = H x_k + N(0, R);  x_0 deterministic."""

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        d = self.x0.shape[0]
        m = self.H.shape[0]
        if self.F.shape != (d, d) or self.Q.shape != (d, d):
            raise ValueError("F and Q must be d x d")
        if self.H.shape != (m, d) or self.R.shape != (m, m):
            raise ValueError("H must be m x d and R m x m")


@dataclass
class KalmanResult:
    pred_means: np.ndarray   # (n, d)
    pred_covs: np.ndarray    # (n, d, d)
    filt_means: np.ndarray   # (n, d)
    filt_covs: np.ndarray    # (n, d, d)
    log_likelihood: float


def kalman_filter(model: LinearStateSpace, observations: np.ndarray) -> KalmanResult:
    """Run the exact filter over a sequence of observations."""
    ys = np.atleast_2d(np.asarray(observations, dtype=float))
    d = model.x0.shape[0]
    n = ys.shape[0]
    m_filt = model.x0.copy()
    P_filt = np.zeros((d, d))
    pred_means = np.zeros((n, d))
    pred_covs = np.zeros((n, d, d))
    filt_means = np.zeros((n, d))
    filt_covs = np.zeros((n, d, d))
    loglik = 0.0
    I = np.eye(d)
    for k in range(n):
        m_pred = model.F @ m_filt
        P_pred = model.F @ P_filt @ model.F.T + model.Q
        resid = ys[k] - model.H @ m_pred
        S = model.H @ P_pred @ model.H.T + model.R
        S_chol = np.linalg.cholesky(S)
        alpha = np.linalg.solve(S_chol, resid)
        loglik += -0.5 * (
            alpha @ alpha
            + 2.0 * np.log(np.diag(S_chol)).sum()
            + len(resid) * math.log(2.0 * math.pi)
        )
        K = np.linalg.solve(S_chol.T, np.linalg.solve(S_chol, model.H @ P_pred)).T
        m_filt = m_pred + K @ resid
        P_filt = (I - K @ model.H) @ P_pred
        pred_means[k], pred_covs[k] = m_pred, P_pred
        filt_means[k], filt_covs[k] = m_filt, P_filt
    return KalmanResult(pred_means, pred_covs, filt_means, filt_covs, float(loglik))


def ou_euler_transition(theta1: float, theta2: float, level_steps: int) -> tuple[float, float]:
    """Unit-interval transition (F, Q) of Euler-discretized dU = -theta1*U dt + theta2 dW.

    With k substeps of size h = 1/k each substep multiplies the state by
    (1 - theta1*h) and adds N(0, theta2^2 h) noise, so the unit-interval map
    is Gaussian with the accumulated factor and variance.
    """
    if level_steps < 1:
        raise ValueError("need at least one substep")
    h = 1.0 / level_steps
    phi = 1.0 - theta1 * h
    F = phi ** level_steps
    if abs(phi) == 1.0:
        Q = theta2 ** 2 * h * level_steps
    else:
        Q = theta2 ** 2 * h * (1.0 - phi ** (2 * level_steps)) / (1.0 - phi ** 2)
    return float(F), float(Q)


def ou_exact_transition(theta1: float, theta2: float) -> tuple[float, float]:
    """Continuous-time unit-interval transition (F, Q) of the same model."""
    F = math.exp(-theta1)
    if theta1 == 0.0:
        Q = theta2 ** 2
    else:
        Q = theta2 ** 2 * (1.0 - math.exp(-2.0 * theta1)) / (2.0 * theta1)
    return F, Q


def ou_state_space(
    theta1: float,
    theta2: float,
    obs_coeff: float,
    obs_var: float,
    x0: float,
    level_steps: int | None = None,
) -> LinearStateSpace:
    """Scalar linear state-space model at a given discretization.

    ``level_steps`` is the number of Euler substeps per unit interval;
    ``None`` selects the exact continuous-time transition.
    """
    if level_steps is None:
        F, Q = ou_exact_transition(theta1, theta2)
    else:
        F, Q = ou_euler_transition(theta1, theta2, level_steps)
    return LinearStateSpace(
        F=np.array([[F]]),
        Q=np.array([[Q]]),
        H=np.array([[obs_coeff]]),
        R=np.array([[obs_var]]),
        x0=np.array([x0]),
    )
