#!/usr/bin/env python3
"""Regenerate log-log figures from experiment CSV artifacts.

A pure view over the harness output files: reads CSV rows, aggregates
replicate means per error target, fits least-squares slopes and renders
them with matplotlib.  Nothing is recomputed or resampled here; the CSV is
the single source of truth, so identical inputs give identical figures.

Plot kinds
----------
cost-vs-mse   : one series per method from a results CSV; per-epsilon
                replicate-averaged mean squared error against mean cost on
                log-log axes, with the fitted slope in the legend.  The
                slope convention matches the harness summary exactly.
rate-decay    : from a per-level rates CSV; |mean difference| and variance
                against level on a log2 scale with fitted decay exponents.
per-step-rmse : from a per-step sidecar CSV; for each method, at the
                smallest epsilon present, the root-mean-square deviation of
                the per-step values across replicates (a sampling-error
                profile over assimilation steps).

Usage: report.py --spec plotspec.json
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PLOT_KINDS = ("cost-vs-mse", "rate-decay", "per-step-rmse")


class PlotSpecError(ValueError):
    """Invalid plot spec or unusable input data; carries all problems found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def load_spec(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return validate_spec(raw)


def validate_spec(raw: dict) -> dict:
    errors = []
    if not isinstance(raw, dict):
        raise PlotSpecError(["plot spec must be a JSON object"])
    kind = raw.get("kind")
    if kind not in PLOT_KINDS:
        errors.append(f"kind: must be one of {', '.join(PLOT_KINDS)} (got {kind!r})")
    if not isinstance(raw.get("input"), str) or not raw.get("input"):
        errors.append("input: must be a CSV path")
    if not isinstance(raw.get("output"), str) or not raw.get("output"):
        errors.append("output: must be an image path")
    for key in ("title", "x_label", "y_label"):
        if key in raw and not isinstance(raw[key], str):
            errors.append(f"{key}: must be a string")
    unknown = sorted(set(raw) - {"kind", "input", "output", "title", "x_label", "y_label"})
    if unknown:
        errors.append(f"unknown keys: {', '.join(unknown)}")
    if errors:
        raise PlotSpecError(errors)
    return raw


def read_csv_rows(path: str, required: tuple[str, ...]) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotSpecError([f"{path}: empty CSV, nothing to plot"])
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise PlotSpecError([f"{path}: missing column(s) {', '.join(missing)}"])
        rows = list(reader)
    if not rows:
        raise PlotSpecError([f"{path}: no data rows"])
    return rows


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) on log(x); same fit the harness prints."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def cost_vs_mse_series(rows: list[dict]) -> dict[str, dict]:
    """Per-method replicate-averaged (mse, cost) points plus fitted slope."""
    methods = sorted({r["method"] for r in rows})
    out = {}
    problems = []
    for method in methods:
        sub = [r for r in rows if r["method"] == method]
        epsilons = sorted({float(r["epsilon"]) for r in sub}, reverse=True)
        if len(epsilons) < 2:
            problems.append(f"method {method}: needs at least 2 distinct epsilon values")
            continue
        mses, costs = [], []
        for eps in epsilons:
            cell = [r for r in sub if float(r["epsilon"]) == eps]
            errs = [float(r["squared_error"]) for r in cell if r["squared_error"] != ""]
            if not errs:
                continue
            mses.append(float(np.mean(errs)))
            costs.append(float(np.mean([float(r["total_cost"]) for r in cell])))
        finite = [(m, c) for m, c in zip(mses, costs) if math.isfinite(m) and m > 0]
        if len(finite) < 2:
            problems.append(f"method {method}: fewer than 2 usable (mse, cost) points")
            continue
        mse_pts = [m for m, _ in finite]
        cost_pts = [c for _, c in finite]
        out[method] = {
            "mse": mse_pts,
            "cost": cost_pts,
            "slope": fit_loglog_slope(mse_pts, cost_pts),
        }
    if problems:
        raise PlotSpecError(problems)
    return out


def rate_decay_series(rows: list[dict]) -> dict[str, dict]:
    levels = np.array([int(r["level"]) for r in rows])
    if len(levels) < 3:
        raise PlotSpecError(["rate fit needs at least 3 levels"])
    out = {}
    for column, label in (("abs_mean_diff", "|mean difference|"), ("var_diff", "variance")):
        values = np.array([float(r[column]) for r in rows])
        keep = values > 0
        slope = float(np.polyfit(levels[keep], np.log2(values[keep]), 1)[0])
        out[label] = {"levels": levels[keep], "values": values[keep], "rate": -slope}
    return out


def per_step_rmse_series(rows: list[dict]) -> dict[str, dict]:
    eps_min = min(float(r["epsilon"]) for r in rows)
    out = {}
    for method in sorted({r["method"] for r in rows}):
        sub = [r for r in rows if r["method"] == method and float(r["epsilon"]) == eps_min]
        steps = sorted({int(r["step"]) for r in sub})
        if len(steps) < 2:
            raise PlotSpecError([f"method {method}: needs at least 2 steps"])
        rmse = []
        for k in steps:
            vals = np.array([float(r["value"]) for r in sub if int(r["step"]) == k])
            rmse.append(float(np.sqrt(np.mean((vals - vals.mean()) ** 2))))
        out[method] = {"steps": steps, "rmse": rmse, "epsilon": eps_min}
    return out


def make_plot(spec: dict) -> dict[str, float]:
    """Render the figure named by the spec; returns the annotated slopes."""
    kind = spec["kind"]
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    annotations: dict[str, float] = {}
    if kind == "cost-vs-mse":
        rows = read_csv_rows(spec["input"], ("method", "epsilon", "squared_error", "total_cost"))
        series = cost_vs_mse_series(rows)
        for method, data in series.items():
            (line,) = ax.loglog(data["mse"], data["cost"], "o-", label=f"{method} (slope {data['slope']:.2f})")
            annotations[method] = data["slope"]
        ax.set_xlabel(spec.get("x_label", "mean squared error"))
        ax.set_ylabel(spec.get("y_label", "cost (units)"))
    elif kind == "rate-decay":
        rows = read_csv_rows(spec["input"], ("level", "abs_mean_diff", "var_diff"))
        series = rate_decay_series(rows)
        for label, data in series.items():
            ax.semilogy(data["levels"], data["values"], "o-", base=2, label=f"{label} (rate {data['rate']:.2f})")
            annotations[label] = data["rate"]
        ax.set_xlabel(spec.get("x_label", "level"))
        ax.set_ylabel(spec.get("y_label", "per-level statistic"))
    else:
        rows = read_csv_rows(spec["input"], ("method", "epsilon", "replicate", "step", "value"))
        series = per_step_rmse_series(rows)
        for method, data in series.items():
            ax.semilogy(data["steps"], data["rmse"], "o-", label=f"{method} (eps {data['epsilon']:g})")
        ax.set_xlabel(spec.get("x_label", "assimilation step"))
        ax.set_ylabel(spec.get("y_label", "cross-replicate RMSE"))
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    if "title" in spec:
        ax.set_title(spec["title"])
    fig.tight_layout()
    fig.savefig(spec["output"], dpi=120)
    plt.close(fig)
    return annotations


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Render figures from experiment CSVs")
    parser.add_argument("--spec", required=True, help="path to the plot spec (JSON)")
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args.spec)
        annotations = make_plot(spec)
    except PlotSpecError as err:
        print("plot spec rejected:", file=sys.stderr)
        for line in err.errors:
            print(f"  - {line}", file=sys.stderr)
        return 1
    print(f"wrote {spec['output']}")
    for label, value in annotations.items():
        print(f"slope[{label}] = {value:.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
