"""Config-driven experiment harness: epsilon sweeps, oracles, CSV artifacts.

Each experiment kind pits a baseline estimator against its multilevel
counterpart over a grid of error targets, with replicates, and writes one
CSV row per (method, epsilon, replicate).  Row values are bit-reproducible
for a fixed master seed and any thread count: every task owns a child
stream that is a pure function of (seed, method, grid point, replicate),
and rows are emitted in a fixed order.  Wall-clock timings are inherently
non-deterministic, so the wall_seconds CSV column is left empty and real
timings are reported on the summary instead.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import bip as bip_mod
from .engine import (
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
from .enkf import LinearObsModel, enkf_run, mlenkf_run
from .kalman import kalman_filter, ou_state_space
from .particle_filter import (
    HmmModel,
    linear_gaussian_obs,
    mlpf_run,
    particle_filter_run,
    simulate_hmm_data,
)
from .pmmh import ParamModel, ml_pmmh_estimate, pmmh_chain
from .rng import RngStream
from .sde import LevelIndex, make_model, ou_model, simulate_unit_interval, terminal_value_samplers
from .smc_sampler import mlsmc_estimate, sampler_cost, smc_sampler_run, weight_deviation_profile

KINDS = ("mlmc-sde", "pf-vs-mlpf", "smc-vs-mlsmc", "pmmh-vs-mlpmmh", "enkf-vs-mlenkf", "rates")

ORACLE_BY_KIND = {
    "mlmc-sde": "closed-form",
    "pf-vs-mlpf": "kalman",
    "smc-vs-mlsmc": "grid",
    "pmmh-vs-mlpmmh": "long-reference",
    "enkf-vs-mlenkf": "kalman",
    "rates": "none",
}

RESULT_FIELDS = (
    "method",
    "epsilon",
    "replicate",
    "value",
    "oracle_value",
    "squared_error",
    "total_cost",
    "wall_seconds",
    "L",
    "seed",
)

_DEFAULT_PARAMS: dict[str, dict] = {
    "mlmc-sde": {
        "alpha": 1.0, "beta": 1.0, "zeta": 1.0,
        "pilot_samples": 4000, "pilot_levels": 5, "mc_scale": 1.0,
    },
    "pf-vs-mlpf": {
        "n_obs": 25, "obs_coeff": 1.0, "obs_var": 0.04,
        "data_level": 10, "oracle_level": 11,
        "alpha": 1.0, "beta": 0.5, "zeta": 1.0,
        "pf_scale": 0.2, "mlpf_scale": 0.2,
    },
    "smc-vs-mlsmc": {
        "K": 2, "M": 10, "sigma0": 0.2, "noise_sd": 0.2,
        "true_u": [0.5, -0.5], "data_level": 8, "oracle_level": 8, "oracle_grid": 161,
        "alpha": 2.0, "beta": 2.0, "zeta": 1.0, "scale": 2.0, "min_samples": 16,
        "mutation_steps": 5, "mutation_scale": 0.7, "init_chain_steps": 25,
    },
    "pmmh-vs-mlpmmh": {
        "n_obs": 25, "obs_coeff": 1.0, "obs_var": 0.04,
        "data_level": 10, "theta2": 0.5, "true_theta": 1.0,
        "prior_low": 0.2, "prior_high": 2.0,
        "n_particles": 100, "alpha": 1.0, "beta": 1.0, "zeta": 1.0,
        "chain_scale": 2.0, "proposal_scale": 0.2, "reference_factor": 10,
    },
    "enkf-vs-mlenkf": {
        "n_obs": 25, "obs_coeff": 1.0, "obs_var": 0.04,
        "data_level": 10, "oracle_level": 11,
        "alpha": 1.0, "beta": 1.0, "zeta": 1.0,
        "enkf_scale": 1.0, "mlenkf_scale": 1.0,
    },
    "rates": {"levels": [3, 8], "pairs": 100000},
}

_DEFAULT_MODELS: dict[str, dict] = {
    "mlmc-sde": {"name": "gbm", "theta": [0.5, 0.5], "initial_state": 1.0},
    "pf-vs-mlpf": {"name": "ou", "theta": [0.5, 0.5], "initial_state": 1.0},
    "smc-vs-mlsmc": {"name": "bip"},
    "pmmh-vs-mlpmmh": {"name": "ou"},
    "enkf-vs-mlenkf": {"name": "ou", "theta": [0.5, 0.5], "initial_state": 1.0},
    "rates": {"name": "gbm", "theta": [0.5, 0.5], "initial_state": 1.0},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; carries every violation found."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid config: " + "; ".join(errors))


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    epsilons: list[float]
    replicates: int
    output: str
    oracle: str
    model: dict
    params: dict

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "epsilons": list(self.epsilons),
            "replicates": self.replicates,
            "output": self.output,
            "oracle": self.oracle,
            "model": dict(self.model),
            "params": dict(self.params),
        }

    def canonical_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def validate_config(raw: str | dict) -> ExperimentConfig:
    """Parse and fully validate a config, reporting every violation at once."""
    errors: list[str] = []
    if isinstance(raw, str):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as err:
            raise ConfigError([f"not valid JSON: {err}"]) from err
    else:
        data = dict(raw)
    if not isinstance(data, dict):
        raise ConfigError(["top-level config must be a JSON object"])

    kind = data.get("kind")
    if kind not in KINDS:
        errors.append(f"kind: must be one of {', '.join(KINDS)} (got {kind!r})")
        kind = None

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        errors.append(f"seed: must be a non-negative integer (got {seed!r})")
        seed = 0

    eps_raw = data.get("epsilons")
    if eps_raw is None and kind == "rates":
        eps_raw = [0.5]
    epsilons: list[float] = []
    if not isinstance(eps_raw, list) or not eps_raw:
        errors.append("epsilons: must be a non-empty list")
    else:
        ok = all(isinstance(e, (int, float)) and 0.0 < float(e) < 1.0 for e in eps_raw)
        if not ok:
            errors.append(f"epsilons: every entry must lie strictly in (0, 1) (got {eps_raw})")
        elif any(float(eps_raw[i]) <= float(eps_raw[i + 1]) for i in range(len(eps_raw) - 1)):
            errors.append(f"epsilons: must be strictly decreasing (got {eps_raw})")
        else:
            epsilons = [float(e) for e in eps_raw]

    replicates = data.get("replicates", 2)
    if not isinstance(replicates, int) or replicates < 2:
        errors.append(f"replicates: must be an integer >= 2 (got {replicates!r})")
        replicates = 2

    output = data.get("output", "results.csv")
    if not isinstance(output, str) or not output:
        errors.append("output: must be a non-empty path string")
        output = "results.csv"

    oracle = data.get("oracle")
    if kind is not None:
        required = ORACLE_BY_KIND[kind]
        if oracle is None:
            oracle = required
        elif oracle != required:
            errors.append(
                f"oracle: experiment kind {kind!r} supports only {required!r} (got {oracle!r})"
            )
    oracle = oracle or "none"

    model = data.get("model", {})
    if not isinstance(model, dict):
        errors.append("model: must be an object")
        model = {}
    if kind is not None:
        merged_model = dict(_DEFAULT_MODELS[kind])
        merged_model.update(model)
        model = merged_model
        if kind in ("mlmc-sde", "pf-vs-mlpf", "enkf-vs-mlenkf", "rates"):
            if model.get("name") not in ("gbm", "ou", "langevin-like"):
                errors.append(f"model.name: unknown SDE model {model.get('name')!r}")
        if kind == "mlmc-sde" and model.get("name") != "gbm":
            errors.append("model.name: closed-form oracle requires the 'gbm' model")

    params = data.get("params", {})
    if not isinstance(params, dict):
        errors.append("params: must be an object")
        params = {}
    if kind is not None:
        defaults = _DEFAULT_PARAMS[kind]
        unknown = sorted(set(params) - set(defaults))
        if unknown:
            errors.append(f"params: unknown keys for kind {kind!r}: {', '.join(unknown)}")
        merged = dict(defaults)
        merged.update({k: v for k, v in params.items() if k in defaults})
        params = merged

    extra_keys = sorted(
        set(data) - {"kind", "seed", "epsilons", "replicates", "output", "oracle", "model", "params"}
    )
    if extra_keys:
        errors.append(f"unknown top-level keys: {', '.join(extra_keys)}")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        kind=kind,
        seed=seed,
        epsilons=epsilons,
        replicates=replicates,
        output=output,
        oracle=oracle,
        model=model,
        params=params,
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_config(fh.read())


@dataclass
class ResultRow:
    method: str
    epsilon: float
    replicate: int
    value: float
    oracle_value: Optional[float]
    squared_error: Optional[float]
    total_cost: float
    wall_seconds: float
    L: int
    seed: int

    @classmethod
    def build(cls, method, epsilon, replicate, value, oracle_value, total_cost, wall, L, seed):
        sq = None if oracle_value is None else (value - oracle_value) ** 2
        return cls(method, epsilon, replicate, value, oracle_value, sq, total_cost, wall, L, seed)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def rows_to_csv(rows: list[ResultRow]) -> str:
    """Render rows in the fixed column order; wall_seconds stays empty so the
    artifact is byte-stable under re-runs and any thread count."""
    lines = [",".join(RESULT_FIELDS)]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.method,
                    _fmt(r.epsilon),
                    _fmt(r.replicate),
                    _fmt(r.value),
                    _fmt(r.oracle_value),
                    _fmt(r.squared_error),
                    _fmt(r.total_cost),
                    "",
                    _fmt(r.L),
                    _fmt(r.seed),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def summarize(rows: list[ResultRow], epsilons: list[float]) -> str:
    """Per-method cost/MSE aggregates and log-log slopes (replicate-averaged)."""
    methods = sorted({r.method for r in rows})
    lines = []
    for method in methods:
        costs, mses, walls = [], [], []
        for eps in epsilons:
            sub = [r for r in rows if r.method == method and r.epsilon == eps]
            if not sub:
                continue
            costs.append(float(np.mean([r.total_cost for r in sub])))
            walls.append(float(np.mean([r.wall_seconds for r in sub])))
            errs = [r.squared_error for r in sub if r.squared_error is not None]
            mses.append(float(np.mean(errs)) if errs else float("nan"))
        for eps, c, m, w in zip(epsilons, costs, mses, walls):
            lines.append(
                f"  {method:8s} eps={eps:<8g} mean_cost={c:<12.6g} mean_mse={m:<12.6g} mean_wall={w:.3f}s"
            )
        if len(costs) >= 2:
            slope_eps = fit_loglog_slope(epsilons[: len(costs)], costs)
            lines.append(f"  {method:8s} slope(log cost vs log eps) = {slope_eps:.2f}")
            finite = [(m, c) for m, c in zip(mses, costs) if math.isfinite(m) and m > 0]
            if len(finite) >= 2:
                slope_mse = fit_loglog_slope([m for m, _ in finite], [c for _, c in finite])
                lines.append(f"  {method:8s} slope(log cost vs log mse) = {slope_mse:.2f}")
    return "\n".join(lines)


@dataclass
class ExperimentOutcome:
    rows: list[ResultRow]
    csv_text: str
    summary: str
    extra_csv: dict = field(default_factory=dict)   # side artifacts, e.g. per-step rows


# ---------------------------------------------------------------------------
# Kind: rates
# ---------------------------------------------------------------------------

def _run_rates(config: ExperimentConfig, root: RngStream) -> ExperimentOutcome:
    model = make_model(
        config.model["name"], config.model["theta"], config.model["initial_state"]
    )
    phi = lambda states: states[:, 0]
    _, coupled = terminal_value_samplers(model, phi)
    lmin, lmax = config.params["levels"]
    pairs = int(config.params["pairs"])
    stats = []
    for l in range(lmin, lmax + 1):
        fine, coarse = coupled(l, root.split(20, l), pairs)
        diff = fine - coarse
        stats.append((l, abs(float(diff.mean())), float(diff.var(ddof=1))))
    alpha_hat, beta_hat = fit_rates(stats)
    lines = [",".join(["level", "abs_mean_diff", "var_diff", "pairs", "seed"])]
    for l, m, v in stats:
        lines.append(",".join([str(l), repr(m), repr(v), str(pairs), str(root.seed)]))
    csv_text = "\n".join(lines) + "\n"
    summary = (
        f"  levels {lmin}..{lmax}, {pairs} pairs per level\n"
        f"  alpha_hat = {alpha_hat:.3f}\n  beta_hat = {beta_hat:.3f}"
    )
    return ExperimentOutcome(rows=[], csv_text=csv_text, summary=summary)


# ---------------------------------------------------------------------------
# Kind: mlmc-sde
# ---------------------------------------------------------------------------

def _pilot_variances(phi_level1, coupled, n_pilot: int, levels: int, stream: RngStream) -> list[float]:
    out = [float(np.var(phi_level1(stream.split(1), n_pilot), ddof=1))]
    for l in range(2, levels + 1):
        f, c = coupled(l, stream.split(l), n_pilot)
        out.append(float(np.var(f - c, ddof=1)))
    return out


def calibrated_schedule(
    epsilon: float, rates: RateParams, L: int, pilot_variances: list[float]
) -> LevelSchedule:
    """Schedule whose planned variance sum matches epsilon^2.

    Pilot per-level variances are extrapolated beyond the measured range at
    the declared beta rate, and the allocation scale is chosen so
    sum_l V_l / N_l = epsilon^2.
    """
    V = list(pilot_variances)
    while len(V) < L:
        V.append(V[-1] * 2.0 ** (-rates.beta))
    h = [2.0 ** (-l) for l in range(1, L + 1)]
    K_L = sum(hl ** ((rates.beta - rates.zeta) / 2.0) for hl in h)
    scale = sum(v * hl ** (-(rates.beta + rates.zeta) / 2.0) for v, hl in zip(V, h)) / K_L
    return allocate_samples(epsilon, rates, L, scale=scale)


def _run_mlmc_sde(config: ExperimentConfig, root: RngStream, threads: int) -> ExperimentOutcome:
    p = config.params
    model = make_model(config.model["name"], config.model["theta"], config.model["initial_state"])
    theta1 = float(config.model["theta"][0])
    oracle_value = float(config.model["initial_state"]) * math.exp(theta1)
    rates = RateParams(p["alpha"], p["beta"], p["zeta"])
    phi = lambda states: states[:, 0]
    phi_level1, coupled = terminal_value_samplers(model, phi)
    L_max = choose_max_level(min(config.epsilons), rates.alpha)
    pilot = _pilot_variances(
        phi_level1, coupled, int(p["pilot_samples"]), min(int(p["pilot_levels"]), L_max), root.split(2)
    )

    def task(method: str, eps_idx: int, rep: int, stream: RngStream) -> ResultRow:
        eps = config.epsilons[eps_idx]
        L = choose_max_level(eps, rates.alpha)
        t0 = time.perf_counter()
        if method == "mc":
            N = max(2, math.ceil(p["mc_scale"] * pilot[0] * eps ** -2))
            level = LevelIndex(L)

            def sampler(s: RngStream, n: int) -> np.ndarray:
                start = np.broadcast_to(model.initial_state, (n, model.dim)).copy()
                return phi(simulate_unit_interval(model, level, start, s))

            report = mc_estimate(sampler, N, stream, cost_per_sample=2.0 ** (L * rates.zeta))
        else:
            schedule = calibrated_schedule(eps, rates, L, pilot)
            report = mlmc_estimate(coupled, phi_level1, schedule, stream)
        wall = time.perf_counter() - t0
        return ResultRow.build(method, eps, rep, report.value, oracle_value, report.total_cost, wall, L, root.seed)

    rows = _run_grid(config, root, threads, ("mc", "mlmc"), task)
    return ExperimentOutcome(rows, rows_to_csv(rows), summarize(rows, config.epsilons))


# ---------------------------------------------------------------------------
# Kind: pf-vs-mlpf
# ---------------------------------------------------------------------------

def _linear_setup(config: ExperimentConfig, root: RngStream):
    """Shared OU + linear-Gaussian observation setup with synthetic data."""
    p = config.params
    theta = config.model.get("theta", [0.5, 0.5])
    sde = ou_model(theta[0], theta[1], config.model.get("initial_state", 1.0))
    H = np.array([[p["obs_coeff"]]])
    R = np.array([[p["obs_var"]]])
    _, ys = simulate_hmm_data(sde, LevelIndex(int(p["data_level"])), H, R, int(p["n_obs"]), root.split(1))
    return sde, H, R, ys, theta


def _run_pf_mlpf(config: ExperimentConfig, root: RngStream, threads: int) -> ExperimentOutcome:
    p = config.params
    sde, H, R, ys, theta = _linear_setup(config, root)
    hmm = HmmModel(sde=sde, obs_log_density=linear_gaussian_obs(H, R), observations=ys)
    oracle_model = ou_state_space(
        theta[0], theta[1], p["obs_coeff"], p["obs_var"],
        config.model.get("initial_state", 1.0), 2 ** int(p["oracle_level"]),
    )
    oracle_value = float(kalman_filter(oracle_model, ys).filt_means[-1, 0])
    rates = RateParams(p["alpha"], p["beta"], p["zeta"])
    phi = lambda states: states[:, 0]
    n_obs = int(p["n_obs"])
    step_rows: dict[tuple, list] = {}

    def task(method: str, eps_idx: int, rep: int, stream: RngStream) -> ResultRow:
        eps = config.epsilons[eps_idx]
        L = choose_max_level(eps, rates.alpha)
        t0 = time.perf_counter()
        steps = []
        if method == "pf":
            N = max(2, math.ceil(p["pf_scale"] * eps ** -2))
            result = particle_filter_run(hmm, LevelIndex(L), N, stream)
            value = result.ensembles[-1].estimate(phi)
            cost = n_obs * N * 2.0 ** (L * rates.zeta)
            for k, ens in enumerate(result.ensembles):
                w = ens.normalized_weights.weights
                contrib = len(w) * w * phi(ens.particles)
                steps.append((k + 1, ens.estimate(phi), float(contrib.var(ddof=1)), (k + 1) * N * 2.0 ** (L * rates.zeta)))
        else:
            schedule = allocate_samples(eps, rates, L, scale=p["mlpf_scale"])
            if schedule.max_level < 2:
                schedule = allocate_samples(eps, rates, 2, scale=p["mlpf_scale"])
                L = 2
            result = mlpf_run(hmm, schedule, phi, stream)
            value = result.step_reports[-1].value
            cost = result.step_reports[-1].total_cost
            for k, rep_k in enumerate(result.step_reports):
                steps.append((k + 1, rep_k.value, float(sum(rep_k.per_level_variances)), rep_k.total_cost))
        wall = time.perf_counter() - t0
        step_rows[(method, eps_idx, rep)] = steps
        return ResultRow.build(method, eps, rep, value, oracle_value, cost, wall, L, root.seed)

    rows = _run_grid(config, root, threads, ("pf", "mlpf"), task)
    lines = [",".join(["method", "epsilon", "replicate", "step", "value", "variance_proxy", "cost"])]
    for eps_idx in range(len(config.epsilons)):
        for rep in range(config.replicates):
            for method in ("mlpf", "pf"):
                for k, v, var, c in step_rows[(method, eps_idx, rep)]:
                    lines.append(
                        ",".join(
                            [method, repr(config.epsilons[eps_idx]), str(rep), str(k), repr(v), repr(var), repr(c)]
                        )
                    )
    extra = {"steps": "\n".join(lines) + "\n"}
    return ExperimentOutcome(rows, rows_to_csv(rows), summarize(rows, config.epsilons), extra_csv=extra)


# ---------------------------------------------------------------------------
# Kind: smc-vs-mlsmc
# ---------------------------------------------------------------------------

def _run_smc_mlsmc(config: ExperimentConfig, root: RngStream, threads: int) -> ExperimentOutcome:
    p = config.params
    model = bip_mod.default_model(
        K=int(p["K"]), M=int(p["M"]), sigma0=p["sigma0"], noise_sd=p["noise_sd"]
    )
    model.data = bip_mod.generate_synthetic_data(
        model, np.asarray(p["true_u"], dtype=float), bip_mod.FemLevel(int(p["data_level"])), root.split(1)
    )
    oracle_value = bip_mod.grid_posterior(
        model, bip_mod.FemLevel(int(p["oracle_level"])), n_grid=int(p["oracle_grid"])
    ).phi_mean
    rates = RateParams(p["alpha"], p["beta"], p["zeta"])
    phi = lambda u: u[:, 0]
    mult = 1.0 + p["mutation_steps"]

    def build_seq(L: int):
        return bip_mod.bip_target_sequence(
            model, L,
            mutation_steps=int(p["mutation_steps"]),
            mutation_scale=p["mutation_scale"],
            init_chain_steps=int(p["init_chain_steps"]),
        )

    # per-level weight-deviation profile from one diagnostic sampler run
    L_profile = max(3, choose_max_level(min(config.epsilons), rates.alpha) + 1)
    profile_seq = build_seq(L_profile)
    profile_run = smc_sampler_run(profile_seq, [2000] * L_profile, root.split(4))
    deviations = weight_deviation_profile(profile_seq, profile_run.ensembles)
    dev_lines = [",".join(["level", "sup_deviation", "l2_deviation", "particles", "seed"])]
    for d in deviations:
        dev_lines.append(",".join([str(d.level), repr(d.sup), repr(d.l2), "2000", str(root.seed)]))

    def task(method: str, eps_idx: int, rep: int, stream: RngStream) -> ResultRow:
        eps = config.epsilons[eps_idx]
        L = max(2, choose_max_level(eps, rates.alpha))
        schedule = allocate_samples(eps, rates, L, scale=p["scale"], min_samples=int(p["min_samples"]))
        planned = sampler_cost(schedule.samples[: L - 1], rates.zeta, mult)
        t0 = time.perf_counter()
        if method == "mlsmc":
            report = mlsmc_estimate(build_seq(L), phi, schedule.samples, stream, zeta=rates.zeta)
            value, cost = report.value, report.total_cost
        else:
            unit = sampler_cost([1] * L, rates.zeta, mult)
            N = max(4, math.ceil(planned / unit))
            run = smc_sampler_run(build_seq(L), [N] * L, stream)
            value = float(np.mean(phi(run.ensembles[-1])))
            cost = sampler_cost([N] * L, rates.zeta, mult)
        wall = time.perf_counter() - t0
        return ResultRow.build(method, eps, rep, value, oracle_value, cost, wall, L, root.seed)

    rows = _run_grid(config, root, threads, ("smc", "mlsmc"), task)
    extra = {"deviation": "\n".join(dev_lines) + "\n"}
    return ExperimentOutcome(rows, rows_to_csv(rows), summarize(rows, config.epsilons), extra_csv=extra)


# ---------------------------------------------------------------------------
# Kind: pmmh-vs-mlpmmh
# ---------------------------------------------------------------------------

def _pmmh_param_model(config: ExperimentConfig, ys: np.ndarray) -> ParamModel:
    p = config.params
    H = np.array([[p["obs_coeff"]]])
    R = np.array([[p["obs_var"]]])
    obs_log_density = linear_gaussian_obs(H, R)
    theta2 = float(p["theta2"])
    u0 = float(config.model.get("initial_state", 1.0))
    lo, hi = float(p["prior_low"]), float(p["prior_high"])

    def make_hmm(theta: np.ndarray) -> HmmModel:
        return HmmModel(
            sde=ou_model(float(theta[0]), theta2, u0),
            obs_log_density=obs_log_density,
            observations=ys,
        )

    return ParamModel(
        dim_theta=1,
        log_prior=lambda th: 0.0 if lo <= th[0] <= hi else -math.inf,
        sample_prior=lambda s: np.array([s.generator.uniform(lo, hi)]),
        make_hmm=make_hmm,
    )


def _run_pmmh(config: ExperimentConfig, root: RngStream, threads: int) -> ExperimentOutcome:
    p = config.params
    theta2 = float(p["theta2"])
    u0 = float(config.model.get("initial_state", 1.0))
    true_sde = ou_model(float(p["true_theta"]), theta2, u0)
    H = np.array([[p["obs_coeff"]]])
    R = np.array([[p["obs_var"]]])
    _, ys = simulate_hmm_data(true_sde, LevelIndex(int(p["data_level"])), H, R, int(p["n_obs"]), root.split(1))
    model = _pmmh_param_model(config, ys)
    rates = RateParams(p["alpha"], p["beta"], p["zeta"])
    phi = lambda theta, traj: float(theta[0])
    n_particles = int(p["n_particles"])

    eps_min = min(config.epsilons)
    L_ref = choose_max_level(eps_min, rates.alpha)
    n_ref = int(p["reference_factor"]) * max(2, math.ceil(p["chain_scale"] * eps_min ** -2))
    ref_chain = pmmh_chain(
        model, LevelIndex(L_ref), n_particles, n_ref, root.split(3),
        proposal_scale=p["proposal_scale"], adapt=True, n_burnin=n_ref // 5,
    )
    oracle_value = float(ref_chain.kept_thetas.mean())

    def task(method: str, eps_idx: int, rep: int, stream: RngStream) -> ResultRow:
        eps = config.epsilons[eps_idx]
        L = max(2, choose_max_level(eps, rates.alpha))
        t0 = time.perf_counter()
        if method == "pmmh":
            n_iters = max(2, math.ceil(p["chain_scale"] * eps ** -2))
            chain = pmmh_chain(
                model, LevelIndex(L), n_particles, n_iters, stream,
                proposal_scale=p["proposal_scale"], adapt=True, n_burnin=n_iters // 5,
            )
            value = float(chain.kept_thetas.mean())
            cost = n_iters * 2.0 ** (L * rates.zeta)
        else:
            schedule = allocate_samples(eps, rates, L, scale=p["chain_scale"], min_samples=10)
            report = ml_pmmh_estimate(
                model, schedule, phi, n_particles, stream, proposal_scale=p["proposal_scale"]
            )
            value, cost = report.value, report.total_cost
        wall = time.perf_counter() - t0
        return ResultRow.build(method, eps, rep, value, oracle_value, cost, wall, L, root.seed)

    rows = _run_grid(config, root, threads, ("pmmh", "mlpmmh"), task)
    return ExperimentOutcome(rows, rows_to_csv(rows), summarize(rows, config.epsilons))


# ---------------------------------------------------------------------------
# Kind: enkf-vs-mlenkf
# ---------------------------------------------------------------------------

def _run_enkf(config: ExperimentConfig, root: RngStream, threads: int) -> ExperimentOutcome:
    p = config.params
    sde, H, R, ys, theta = _linear_setup(config, root)
    obs = LinearObsModel(H=H, Gamma=R, observations=ys)
    oracle_model = ou_state_space(
        theta[0], theta[1], p["obs_coeff"], p["obs_var"],
        config.model.get("initial_state", 1.0), 2 ** int(p["oracle_level"]),
    )
    oracle = kalman_filter(oracle_model, ys)
    oracle_value = float(oracle.filt_means[-1, 0])
    rates = RateParams(p["alpha"], p["beta"], p["zeta"])
    n_obs = int(p["n_obs"])
    step_rows: dict[tuple, list] = {}

    def task(method: str, eps_idx: int, rep: int, stream: RngStream) -> ResultRow:
        eps = config.epsilons[eps_idx]
        L = max(2, choose_max_level(eps, rates.alpha))
        t0 = time.perf_counter()
        steps = []
        if method == "enkf":
            N = max(2, math.ceil(p["enkf_scale"] * eps ** -2))
            states = enkf_run(sde, obs, LevelIndex(L), N, stream)
            value = float(states[-1].mean[0])
            cost = n_obs * N * 2.0 ** (L * rates.zeta)
            for k, state in enumerate(states):
                steps.append((
                    k + 1,
                    float(np.linalg.norm(state.mean - oracle.filt_means[k])),
                    float(np.linalg.norm(state.covariance - oracle.filt_covs[k])),
                    (k + 1) * N * 2.0 ** (L * rates.zeta),
                ))
        else:
            schedule = allocate_samples_covariance(eps, rates, L, scale=p["mlenkf_scale"])
            result = mlenkf_run(sde, obs, schedule, stream)
            value = float(result.ml_means[-1, 0])
            cost = result.total_cost
            for k in range(n_obs):
                steps.append((
                    k + 1,
                    float(np.linalg.norm(result.ml_means[k] - oracle.filt_means[k])),
                    float(np.linalg.norm(result.ml_covariances[k] - oracle.filt_covs[k])),
                    (k + 1) * schedule.total_cost,
                ))
        wall = time.perf_counter() - t0
        step_rows[(method, eps_idx, rep)] = steps
        return ResultRow.build(method, eps, rep, value, oracle_value, cost, wall, L, root.seed)

    rows = _run_grid(config, root, threads, ("enkf", "mlenkf"), task)
    lines = [",".join(["method", "epsilon", "replicate", "step", "rmse_mean", "rmse_cov", "cost"])]
    for eps_idx in range(len(config.epsilons)):
        for rep in range(config.replicates):
            for method in ("enkf", "mlenkf"):
                for k, rm, rc, c in step_rows[(method, eps_idx, rep)]:
                    lines.append(
                        ",".join(
                            [method, repr(config.epsilons[eps_idx]), str(rep), str(k), repr(rm), repr(rc), repr(c)]
                        )
                    )
    extra = {"steps": "\n".join(lines) + "\n"}
    return ExperimentOutcome(rows, rows_to_csv(rows), summarize(rows, config.epsilons), extra_csv=extra)


# ---------------------------------------------------------------------------
# Grid execution
# ---------------------------------------------------------------------------

def _run_grid(
    config: ExperimentConfig,
    root: RngStream,
    threads: int,
    methods: tuple[str, ...],
    task: Callable[[str, int, int, RngStream], ResultRow],
) -> list[ResultRow]:
    """Run every (method, epsilon, replicate) task, in parallel if asked.

    Each task draws from a child stream keyed by its grid coordinates, so
    results do not depend on scheduling; rows come back sorted in
    (epsilon, replicate, method) order.
    """
    jobs = []
    for eps_idx in range(len(config.epsilons)):
        for rep in range(config.replicates):
            for m_idx, method in enumerate(methods):
                stream = root.split(10, m_idx, eps_idx, rep)
                jobs.append((eps_idx, rep, method, m_idx, stream))
    if threads <= 1:
        results = [task(method, eps_idx, rep, stream) for eps_idx, rep, method, _, stream in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(task, method, eps_idx, rep, stream)
                for eps_idx, rep, method, _, stream in jobs
            ]
            results = [f.result() for f in futures]
    keyed = {
        (job[0], job[1], job[2]): row for job, row in zip(jobs, results)
    }
    ordered = []
    for eps_idx in range(len(config.epsilons)):
        for rep in range(config.replicates):
            for method in sorted(methods):
                ordered.append(keyed[(eps_idx, rep, method)])
    return ordered


_RUNNERS = {
    "mlmc-sde": _run_mlmc_sde,
    "pf-vs-mlpf": _run_pf_mlpf,
    "smc-vs-mlsmc": _run_smc_mlsmc,
    "pmmh-vs-mlpmmh": _run_pmmh,
    "enkf-vs-mlenkf": _run_enkf,
}


def run_experiment(
    config: ExperimentConfig,
    threads: int = 1,
    seed: Optional[int] = None,
    output: Optional[str] = None,
) -> ExperimentOutcome:
    """Execute one experiment and write its CSV artifact(s)."""
    master_seed = config.seed if seed is None else seed
    root = RngStream(master_seed)
    if config.kind == "rates":
        outcome = _run_rates(config, root)
    else:
        outcome = _RUNNERS[config.kind](config, root, threads)
    path = output or config.output
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(outcome.csv_text)
        for suffix, text in outcome.extra_csv.items():
            with open(f"{path}.{suffix}.csv", "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
    return outcome
