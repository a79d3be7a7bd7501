"""One-dimensional elliptic inverse problem as a concrete target hierarchy.

The forward map solves -(c(x;u) p')' = f on (0,1) with zero boundary values
by piecewise-linear finite elements on a nested dyadic mesh (level l has
2**l cells).  The diffusion coefficient is a uniformly elliptic mean field
plus K bounded modes with decaying amplitudes and i.i.d. U[-1,1]
coefficients (the prior).  Observations are local averages of the solution
with Gaussian noise; the misfit defines one unnormalized posterior density
per mesh level, which feeds the SMC sampler machinery.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import RngStream
from .smc_sampler import TargetSequence, mutate_population


@dataclass(frozen=True)
class FemLevel:
    """Dyadic mesh on [0,1]: 2**l cells, 2**l - 1 interior nodes."""

    l: int
    h: float = field(init=False)
    n_cells: int = field(init=False)
    n_interior: int = field(init=False)

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("FEM level must be >= 1")
        object.__setattr__(self, "h", 2.0 ** (-self.l))
        object.__setattr__(self, "n_cells", 2 ** self.l)
        object.__setattr__(self, "n_interior", 2 ** self.l - 1)

    @property
    def nodes(self) -> np.ndarray:
        """All node positions including the boundary."""
        return np.linspace(0.0, 1.0, self.n_cells + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.h


@dataclass
class EllipticModel:
    """Forward model, prior box and observation setup.

    amplitudes : (K,) decaying positive mode amplitudes.
    mean_field, forcing : vectorized callables of position.
    mode : callable (k, x) -> values of the k-th sup-norm-1 mode (k is
        1-based).
    obs_intervals : (M, 2) subinterval bounds of the local-average
        observation functionals.
    noise_cov : (M, M) observation noise covariance.
    data : observed M-vector (set after synthetic-data generation).
    """

    amplitudes: np.ndarray
    mean_field: Callable[[np.ndarray], np.ndarray]
    mode: Callable[[int, np.ndarray], np.ndarray]
    forcing: Callable[[np.ndarray], np.ndarray]
    obs_intervals: np.ndarray
    noise_cov: np.ndarray
    data: Optional[np.ndarray] = None
    ellipticity_floor: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        self.obs_intervals = np.asarray(self.obs_intervals, dtype=float)
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        self.noise_chol = np.linalg.cholesky(self.noise_cov)
        floor = self.check_ellipticity()
        if floor <= 0:
            raise ValueError(f"coefficient field can lose ellipticity (floor {floor:.3g})")
        if self.ellipticity_floor <= 0:
            self.ellipticity_floor = floor

    @property
    def n_modes(self) -> int:
        return len(self.amplitudes)

    @property
    def n_obs(self) -> int:
        return self.obs_intervals.shape[0]

    def check_ellipticity(self, n_grid: int = 2049) -> float:
        """Worst-case coefficient lower bound over a fine grid."""
        x = np.linspace(0.0, 1.0, n_grid)
        worst = self.mean_field(x) - sum(
            self.amplitudes[k - 1] * np.abs(self.mode(k, x)) for k in range(1, self.n_modes + 1)
        )
        return float(worst.min())

    def coefficient(self, u: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Diffusion coefficient at positions x for a batch of mode vectors."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.broadcast_to(self.mean_field(x), (u.shape[0], len(x))).copy()
        for k in range(1, self.n_modes + 1):
            out += u[:, k - 1][:, None] * self.amplitudes[k - 1] * self.mode(k, x)[None, :]
        return out

    def in_prior_box(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.all(np.abs(u) <= 1.0, axis=1)


def default_model(
    K: int = 2,
    M: int = 10,
    sigma0: float = 0.2,
    noise_sd: float = 0.01,
    forcing_scale: float = 30.0,
) -> EllipticModel:
    """Unit mean field, cosine modes with geometric amplitude decay.

    The forcing magnitude sets the observation signal-to-noise; the default
    makes the mode coefficients well identified at the default noise level
    (posterior spread well inside the prior box).
    """
    edges = np.linspace(0.0, 1.0, M + 1)
    return EllipticModel(
        amplitudes=sigma0 * 2.0 ** (-np.arange(1, K + 1)),
        mean_field=lambda x: np.ones_like(x),
        mode=lambda k, x: np.cos(k * math.pi * x),
        forcing=lambda x: forcing_scale * np.ones_like(x),
        obs_intervals=np.column_stack([edges[:-1], edges[1:]]),
        noise_cov=noise_sd ** 2 * np.eye(M),
    )


def solve_tridiagonal_batch(
    lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray
) -> np.ndarray:
    """Thomas algorithm vectorized over a leading batch axis.

    Stable without pivoting for the SPD diagonally-dominant systems the
    FEM assembly produces.
    """
    n = diag.shape[-1]
    cp = np.zeros_like(diag)
    dp = np.zeros_like(rhs)
    cp[:, 0] = (upper[:, 0] / diag[:, 0]) if n > 1 else 0.0
    dp[:, 0] = rhs[:, 0] / diag[:, 0]
    for i in range(1, n):
        denom = diag[:, i] - lower[:, i - 1] * cp[:, i - 1]
        if i < n - 1:
            cp[:, i] = upper[:, i] / denom
        dp[:, i] = (rhs[:, i] - lower[:, i - 1] * dp[:, i - 1]) / denom
    x = np.zeros_like(rhs)
    x[:, n - 1] = dp[:, n - 1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[:, i] * x[:, i + 1]
    return x


def fem_solve(model: EllipticModel, u: np.ndarray, level: FemLevel) -> np.ndarray:
    """Interior nodal values of the finite element solution.

    Coefficient and forcing are evaluated per element at its midpoint;
    assembly is the standard hat-function stiffness tridiagonal.  Accepts a
    single mode vector (K,) or a batch (N, K); returns (n_interior,) or
    (N, n_interior) accordingly.
    """
    single = np.asarray(u).ndim == 1
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != model.n_modes:
        raise ValueError(f"expected {model.n_modes} mode coefficients, got {u.shape[1]}")
    kappa = model.coefficient(u, level.midpoints)  # (N, n_cells)
    h = level.h
    diag = (kappa[:, :-1] + kappa[:, 1:]) / h          # (N, n_interior)
    off = -kappa[:, 1:-1] / h                          # (N, n_interior - 1)
    f_mid = model.forcing(level.midpoints)              # (n_cells,)
    load = 0.5 * h * (f_mid[:-1] + f_mid[1:])           # (n_interior,)
    rhs = np.broadcast_to(load, diag.shape).copy()
    sol = solve_tridiagonal_batch(off, diag, off, rhs)
    return sol[0] if single else sol


def with_boundary(values: np.ndarray) -> np.ndarray:
    """Pad interior nodal values with the zero boundary conditions."""
    values = np.atleast_2d(values)
    padded = np.zeros((values.shape[0], values.shape[1] + 2))
    padded[:, 1:-1] = values
    return padded


def _piecewise_linear_cumulative(nodes: np.ndarray, values: np.ndarray, t: float) -> np.ndarray:
    """Integral of the piecewise-linear interpolant from 0 to t (batched values)."""
    h = nodes[1] - nodes[0]
    trapz = 0.5 * h * (values[:, :-1] + values[:, 1:])
    cum = np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(trapz, axis=1)], axis=1)
    j = min(int(np.searchsorted(nodes, t, side="right")) - 1, len(nodes) - 2)
    frac = t - nodes[j]
    v_t = values[:, j] + (values[:, j + 1] - values[:, j]) * (frac / h)
    return cum[:, j] + 0.5 * frac * (values[:, j] + v_t)


def observe(model: EllipticModel, interior_values: np.ndarray, level: FemLevel) -> np.ndarray:
    """Local-average observation functionals of the FEM solution.

    Exact integrals of the piecewise-linear solution over each observation
    subinterval, divided by the subinterval length.
    """
    single = np.asarray(interior_values).ndim == 1
    full = with_boundary(np.atleast_2d(interior_values))
    nodes = level.nodes
    out = np.zeros((full.shape[0], model.n_obs))
    for m, (a, b) in enumerate(model.obs_intervals):
        upper = _piecewise_linear_cumulative(nodes, full, float(b))
        lower = _piecewise_linear_cumulative(nodes, full, float(a))
        out[:, m] = (upper - lower) / (b - a)
    return out[0] if single else out


def forward_map(model: EllipticModel, u: np.ndarray, level: FemLevel) -> np.ndarray:
    """Observation-space image of the parameters: observe(fem_solve(u))."""
    return observe(model, fem_solve(model, u, level), level)


def log_kappa(model: EllipticModel, u: np.ndarray, level: FemLevel) -> np.ndarray:
    """Unnormalized log-posterior at one mesh level; -inf outside the prior box."""
    if model.data is None:
        raise ValueError("model has no data; generate or assign observations first")
    single = np.asarray(u).ndim == 1
    u = np.atleast_2d(np.asarray(u, dtype=float))
    out = np.full(u.shape[0], -np.inf)
    inside = model.in_prior_box(u)
    if np.any(inside):
        G = forward_map(model, u[inside], level)
        resid = G - model.data[None, :]
        alpha = np.linalg.solve(model.noise_chol, resid.T)
        out[inside] = -0.5 * np.sum(alpha ** 2, axis=0)
    return float(out[0]) if single else out


def generate_synthetic_data(
    model: EllipticModel,
    true_u: np.ndarray,
    data_level: FemLevel,
    stream: RngStream,
    noiseless: bool = False,
) -> np.ndarray:
    """Observations from a fine forward solve plus Gaussian noise.

    Use a ``data_level`` strictly finer than every inference level so the
    inversion never sees its own discretization.
    """
    clean = forward_map(model, np.asarray(true_u, dtype=float), data_level)
    if noiseless:
        return clean
    return clean + model.noise_chol @ stream.generator.standard_normal(model.n_obs)


@dataclass
class GridPosterior:
    """Dense-grid posterior summary for the two-mode problem."""

    mean: np.ndarray
    mode: np.ndarray
    phi_mean: float


def grid_posterior(
    model: EllipticModel,
    level: FemLevel,
    n_grid: int = 201,
    phi: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> GridPosterior:
    """Brute-force posterior moments on a tensor grid (two modes only)."""
    if model.n_modes != 2:
        raise ValueError("grid oracle implemented for exactly 2 modes")
    g = np.linspace(-1.0, 1.0, n_grid)
    uu, vv = np.meshgrid(g, g, indexing="ij")
    points = np.column_stack([uu.ravel(), vv.ravel()])
    logk = log_kappa(model, points, level)
    logk -= logk.max()
    trap = np.ones(n_grid)
    trap[0] = trap[-1] = 0.5
    cellw = np.outer(trap, trap).ravel()
    w = np.exp(logk) * cellw
    w /= w.sum()
    mean = points.T @ w
    mode = points[int(np.argmax(logk))]
    phi_vals = points[:, 0] if phi is None else np.asarray(phi(points), dtype=float)
    return GridPosterior(mean=mean, mode=mode, phi_mean=float(np.dot(w, phi_vals)))


def bip_target_sequence(
    model: EllipticModel,
    L: int,
    mutation_steps: int = 5,
    mutation_scale: float = 0.3,
    init_chain_steps: int = 25,
) -> TargetSequence:
    """Posterior hierarchy over FEM levels 1..L as a sampler target sequence.

    The first target cannot be sampled exactly; the initial sampler draws
    from the uniform prior box and applies a short vectorized random-walk
    chain targeting the coarsest posterior (an MCMC surrogate, cheap at
    level 1).
    """

    def make_level(l: int):
        fem = FemLevel(l)
        return lambda u: log_kappa(model, u, fem)

    log_kappas = [make_level(l) for l in range(1, L + 1)]

    def initial_sampler(stream: RngStream, n: int) -> np.ndarray:
        u = stream.generator.uniform(-1.0, 1.0, size=(n, model.n_modes))
        return mutate_population(log_kappas[0], u, init_chain_steps, mutation_scale, stream)

    return TargetSequence(
        log_kappas=log_kappas,
        dim=model.n_modes,
        initial_sampler=initial_sampler,
        mutation_steps=mutation_steps,
        mutation_scale=mutation_scale,
    )


def measure_cost_rate(model: EllipticModel, levels: list[int], n_batch: int = 64, repeats: int = 5) -> float:
    """Empirical cost exponent of the forward solve (wall time vs 2**l)."""
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, size=(n_batch, model.n_modes))
    times = []
    for l in levels:
        fem = FemLevel(l)
        fem_solve(model, u, fem)  # warm up
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fem_solve(model, u, fem)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    x = np.log([2.0 ** l for l in levels])
    return float(np.polyfit(x, np.log(times), 1)[0])
