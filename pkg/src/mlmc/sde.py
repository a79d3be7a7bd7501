"""SDE models, Euler discretization and the exact fine/coarse coupled kernel.

States are arrays of shape ``(n, d)`` (a batch of n paths) or ``(d,)`` for a
single path.  Model coefficient functions always receive and return batched
arrays; the public operations promote/squeeze single states.

Levels follow the dyadic convention: level ``l`` uses step size ``h = 2**-l``
and ``2**l`` Euler steps per unit observation interval.  The coupled
transition advances a (fine, coarse) pair over one unit interval by driving
the coarse path with the pairwise-summed, rescaled fine Gaussian increments,
so each lane is marginally an exact single-level Euler transition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import RngStream


@dataclass
class SdeModel:
    """Diffusion model dU = a(U)dt + b(U)dW with a fixed initial state.

    drift : callable
        Batched drift, maps states (n, d) -> (n, d).
    diffusion : callable
        Batched diffusion matrix, maps states (n, d) -> (n, d, d).
    initial_state : array of shape (d,)
    parameter : optional array of static coefficients the drift/diffusion
        were built from (kept for reporting only).
    """

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    initial_state: np.ndarray
    parameter: Optional[np.ndarray] = None

    def __post_init__(self):
        self.initial_state = np.atleast_1d(np.asarray(self.initial_state, dtype=float))
        if self.initial_state.shape != (self.dim,):
            raise ValueError(
                f"initial_state has shape {self.initial_state.shape}, expected ({self.dim},)"
            )

    def validate(self, probe_states: np.ndarray) -> None:
        """Check coefficient output shapes on a batch of probe states."""
        probe = np.atleast_2d(np.asarray(probe_states, dtype=float))
        n = probe.shape[0]
        a = self.drift(probe)
        b = self.diffusion(probe)
        if a.shape != (n, self.dim):
            raise ValueError(f"drift returned shape {a.shape}, expected {(n, self.dim)}")
        if b.shape != (n, self.dim, self.dim):
            raise ValueError(
                f"diffusion returned shape {b.shape}, expected {(n, self.dim, self.dim)}"
            )


@dataclass(frozen=True)
class LevelIndex:
    """Dyadic discretization level: h = 2**-l, 2**l steps per unit interval."""

    l: int
    h: float = field(init=False)
    steps_per_unit: int = field(init=False)

    def __post_init__(self):
        if self.l < 1:
            raise ValueError(f"level must be >= 1, got {self.l}")
        object.__setattr__(self, "h", 2.0 ** (-self.l))
        object.__setattr__(self, "steps_per_unit", 2 ** self.l)

    @property
    def coarser(self) -> "LevelIndex":
        return LevelIndex(self.l - 1)


@dataclass
class CoupledState:
    """A (fine, coarse) pair of states with identical shapes."""

    fine: np.ndarray
    coarse: np.ndarray

    def __post_init__(self):
        self.fine = np.asarray(self.fine, dtype=float)
        self.coarse = np.asarray(self.coarse, dtype=float)
        if self.fine.shape != self.coarse.shape:
            raise ValueError(
                f"fine/coarse shapes differ: {self.fine.shape} vs {self.coarse.shape}"
            )


def euler_step(model: SdeModel, state: np.ndarray, h: float, noise: np.ndarray) -> np.ndarray:
    """One explicit Euler step: state + h*a(state) + sqrt(h)*b(state)@noise."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    state = np.asarray(state, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != state.shape:
        raise ValueError(f"noise shape {noise.shape} does not match state {state.shape}")
    single = state.ndim == 1
    if single:
        state = state[None, :]
        noise = noise[None, :]
    if state.shape[1] != model.dim:
        raise ValueError(f"state dimension {state.shape[1]} != model dim {model.dim}")
    a = model.drift(state)
    b = model.diffusion(state)
    out = state + h * a + math.sqrt(h) * np.einsum("nij,nj->ni", b, noise)
    return out[0] if single else out


def unit_interval_noise(
    stream: RngStream, level: LevelIndex, n: Optional[int] = None, dim: int = 1
) -> np.ndarray:
    """Draw the full increment sequence for one unit interval.

    Shape (steps, dim) for a single path or (steps, n, dim) for a batch.
    Consuming this array step-by-step reproduces exactly the draws that
    :func:`simulate_unit_interval` would make from the same stream state.
    """
    shape = (level.steps_per_unit, dim) if n is None else (level.steps_per_unit, n, dim)
    return stream.generator.standard_normal(shape)


def simulate_unit_interval(
    model: SdeModel,
    level: LevelIndex,
    start: np.ndarray,
    stream: Optional[RngStream] = None,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Advance a state over one unit interval with 2**l Euler steps.

    Exactly one of ``stream`` / ``noise`` supplies the increments; passing a
    recorded ``noise`` array (shape (steps, ...) matching the state) gives a
    bit-reproducible path for testing.
    """
    state = np.asarray(start, dtype=float)
    k = level.steps_per_unit
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape[0] != k or noise.shape[1:] != state.shape:
            raise ValueError(
                f"noise shape {noise.shape} incompatible with {k} steps of state {state.shape}"
            )
    elif stream is None:
        raise ValueError("either stream or noise must be given")
    for m in range(k):
        xi = noise[m] if noise is not None else stream.generator.standard_normal(state.shape)
        state = euler_step(model, state, level.h, xi)
    return state


def coupled_transition(
    model: SdeModel,
    state: CoupledState,
    fine_level: LevelIndex,
    stream: Optional[RngStream] = None,
    noise: Optional[np.ndarray] = None,
) -> CoupledState:
    """Advance a (fine, coarse) pair one unit interval under the exact coupling.

    The fine lane makes 2**l steps of size h_l with fresh increments
    xi_0..xi_{2**l - 1}; the coarse lane makes 2**(l-1) steps of size
    h_{l-1} driven by (xi_{2m} + xi_{2m+1]) / sqrt(2).  Each lane is then
    marginally identical (bit-level, given the same increments) to the
    single-level simulator at its own level.
    """
    if fine_level.l < 2:
        raise ValueError(f"coupled transition needs fine level >= 2, got {fine_level.l}")
    fine = np.asarray(state.fine, dtype=float)
    coarse = np.asarray(state.coarse, dtype=float)
    k = fine_level.steps_per_unit
    h_f = fine_level.h
    h_c = 2.0 * h_f
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape[0] != k or noise.shape[1:] != fine.shape:
            raise ValueError(
                f"noise shape {noise.shape} incompatible with {k} steps of state {fine.shape}"
            )
    elif stream is None:
        raise ValueError("either stream or noise must be given")
    sqrt2 = math.sqrt(2.0)
    for m in range(k // 2):
        if noise is not None:
            xi_a, xi_b = noise[2 * m], noise[2 * m + 1]
        else:
            xi_a = stream.generator.standard_normal(fine.shape)
            xi_b = stream.generator.standard_normal(fine.shape)
        fine = euler_step(model, fine, h_f, xi_a)
        fine = euler_step(model, fine, h_f, xi_b)
        # divide (not multiply by a reciprocal) so the coarse lane is
        # bit-identical to a single-level run on the summed increments
        coarse = euler_step(model, coarse, h_c, (xi_a + xi_b) / sqrt2)
    return CoupledState(fine=fine, coarse=coarse)


def coarsened_noise(noise: np.ndarray) -> np.ndarray:
    """Pairwise-summed, rescaled increments: the coarse lane's driving noise."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape[0] % 2 != 0:
        raise ValueError("need an even number of fine increments")
    return (noise[0::2] + noise[1::2]) / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Built-in scalar models
# ---------------------------------------------------------------------------

def scalar_sde(
    drift_fn: Callable[[np.ndarray], np.ndarray],
    diffusion_fn: Callable[[np.ndarray], np.ndarray],
    initial_state: float,
    parameter: Optional[np.ndarray] = None,
) -> SdeModel:
    """Wrap elementwise scalar coefficient functions into a 1-D SdeModel."""

    def drift(state):
        return np.asarray(drift_fn(state[:, 0]))[:, None]

    def diffusion(state):
        return np.asarray(diffusion_fn(state[:, 0]))[:, None, None]

    return SdeModel(
        dim=1,
        drift=drift,
        diffusion=diffusion,
        initial_state=np.array([initial_state]),
        parameter=parameter,
    )


def gbm_model(theta1: float, theta2: float, initial_state: float = 1.0) -> SdeModel:
    """Geometric Brownian motion: a(u) = theta1*u, b(u) = theta2*u."""
    return scalar_sde(
        lambda u: theta1 * u,
        lambda u: theta2 * u,
        initial_state,
        parameter=np.array([theta1, theta2]),
    )


def ou_model(theta1: float, theta2: float, initial_state: float = 1.0) -> SdeModel:
    """Mean-reverting linear model with additive noise: a(u) = -theta1*u, b = theta2."""
    return scalar_sde(
        lambda u: -theta1 * u,
        lambda u: np.full_like(u, theta2),
        initial_state,
        parameter=np.array([theta1, theta2]),
    )


def langevin_model(theta1: float, theta2: float, initial_state: float = 1.0) -> SdeModel:
    """Nonlinear globally-Lipschitz drift with constant diffusion.

    a(u) = -theta1 * u**3 / (1 + u**2), b = theta2.
    """
    return scalar_sde(
        lambda u: -theta1 * u ** 3 / (1.0 + u ** 2),
        lambda u: np.full_like(u, theta2),
        initial_state,
        parameter=np.array([theta1, theta2]),
    )


_MODEL_BUILDERS = {
    "gbm": gbm_model,
    "ou": ou_model,
    "langevin-like": langevin_model,
}


def make_model(name: str, theta: list[float], initial_state: float = 1.0) -> SdeModel:
    """Build one of the named scalar models ('gbm', 'ou', 'langevin-like')."""
    if name not in _MODEL_BUILDERS:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(_MODEL_BUILDERS)}")
    if len(theta) != 2:
        raise ValueError(f"model {name!r} expects 2 coefficients, got {len(theta)}")
    return _MODEL_BUILDERS[name](theta[0], theta[1], initial_state)


def terminal_value_samplers(model: SdeModel, phi: Callable[[np.ndarray], np.ndarray]):
    """Batched samplers of phi(U_1) for the multilevel estimator.

    Returns ``(phi_level1, coupled_sampler)`` where ``phi_level1(stream, n)``
    simulates n level-1 paths and ``coupled_sampler(l, stream, n)`` simulates
    n coupled pairs at fine level l, both applying phi to the terminal state.
    """

    def phi_level1(stream: RngStream, n: int) -> np.ndarray:
        start = np.broadcast_to(model.initial_state, (n, model.dim)).copy()
        out = simulate_unit_interval(model, LevelIndex(1), start, stream)
        return phi(out)

    def coupled_sampler(level: int, stream: RngStream, n: int):
        start = np.broadcast_to(model.initial_state, (n, model.dim)).copy()
        pair = coupled_transition(
            model, CoupledState(start, start.copy()), LevelIndex(level), stream
        )
        return phi(pair.fine), phi(pair.coarse)

    return phi_level1, coupled_sampler
