"""Batch experiment runner.

``mildflow run <config.yaml>`` drives the full pipeline

    mask -> operators -> hodge -> stokes -> (gate / horizon shrink)
         -> picard -> strong checks -> stepping oracle

and emits three machine-readable files into the output directory:

* ``summary.json``    every norm, gate status, contraction ratios,
                      residuals, oracle deviations, and a config echo;
* ``norms.csv``       the per-node weighted norm terms of the solution;
* ``iterations.csv``  the per-iterate fixed-point log.

``validate`` parses a config without running; ``mask-info`` inspects a
mask file.  Exit codes: 0 ok, 2 config error, 3 mask error, 4 smallness
gate unreachable, 5 fixed-point divergence, 6 oracle failure.

The config is YAML (keys documented in the README); a seed is mandatory
so reruns are bit-reproducible apart from the timestamp field.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .domain import VectorField, load_mask, build_operators
from .errors import (
    ConfigError,
    GateUnreachableError,
    MaskError,
    MildflowError,
    OracleInstabilityError,
    PicardDivergenceError,
)
from .hodge import build_hodge
from .mild import (
    PicardConfig,
    TimeGrid,
    alpha_trajectory,
    estimate_phi_norm,
    et_norm,
    picard_solve,
    shrink_horizon,
    smallness_gate,
)
from .stokes import assemble_stokes
from .verify import energy_audit, imex_oracle, strong_residual

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MASK = 3
EXIT_GATE = 4
EXIT_PICARD = 5
EXIT_ORACLE = 6

_FLOAT_FMT = "%.17g"


@dataclass(eq=False)
class ExperimentConfig:
    """Validated experiment description (see README for the file schema)."""

    mask_path: str
    output_dir: str
    horizon: float
    segments: int
    quad_order: int
    delta: float
    seed: int
    nonlinearity_scale: float
    picard_tol: float
    picard_max_iterations: int
    phi_trials: int
    gate_safety: float
    eps_schedule: list
    oracle_dts: list
    initial_data: dict
    raw: dict = field(default_factory=dict, repr=False)


def load_config(path) -> ExperimentConfig:
    """Parse and statically validate a YAML experiment config."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    def need(key, kind, where=None, label=None):
        src = data if where is None else where
        name = key if label is None else label
        if not isinstance(src, dict) or key not in src:
            raise ConfigError(f"missing config key {name!r}")
        value = src[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool):
            raise ConfigError(f"config key {name!r} must be {kind.__name__}")
        return value

    def optional(key, kind, default, where=None, label=None):
        src = data if where is None else where
        if not isinstance(src, dict) or key not in src:
            return default
        return need(key, kind, where=src, label=label)

    mask_path = need("mask", str)
    output_dir = need("output_dir", str)
    horizon = need("horizon", float)
    segments = need("segments", int)
    quad_order = optional("quad_order", int, 6)
    delta = optional("delta", float, 0.0)
    seed = need("seed", int)
    scale = optional("nonlinearity_scale", float, 1.0)

    picard = data.get("picard", {})
    tol = optional("tol", float, 1e-10, where=picard, label="picard.tol")
    max_it = optional("max_iterations", int, 15, where=picard, label="picard.max_iterations")

    phi_cfg = data.get("phi_norm", {})
    trials = optional("trials", int, 16, where=phi_cfg, label="phi_norm.trials")

    gate = data.get("gate", {})
    safety = optional("safety_factor", float, 2.0, where=gate, label="gate.safety_factor")

    shrink = data.get("shrink", {})
    schedule = shrink.get("eps_schedule", []) if isinstance(shrink, dict) else []
    if not isinstance(schedule, list) or any(
        not isinstance(e, (int, float)) or isinstance(e, bool) or e <= 0 for e in schedule
    ):
        raise ConfigError("shrink.eps_schedule must be a list of positive numbers")

    oracle = data.get("oracle", {})
    dts = oracle.get("dts", []) if isinstance(oracle, dict) else []
    if not isinstance(dts, list) or any(
        not isinstance(d, (int, float)) or isinstance(d, bool) or d <= 0 for d in dts
    ):
        raise ConfigError("oracle.dts must be a list of positive numbers")

    init = need("initial_data", dict)
    kind = need("kind", str, where=init, label="initial_data.kind")
    if kind not in ("zero", "eigenmode", "random", "file"):
        raise ConfigError(f"unknown initial_data.kind {kind!r}")
    if kind == "eigenmode":
        need("mode", int, where=init, label="initial_data.mode")
        need("amplitude", float, where=init, label="initial_data.amplitude")
    elif kind == "random":
        need("amplitude", float, where=init, label="initial_data.amplitude")
    elif kind == "file":
        need("path", str, where=init, label="initial_data.path")

    if horizon <= 0 or segments < 2 or quad_order < 1:
        raise ConfigError("horizon must be positive, segments >= 2, quad_order >= 1")
    if tol <= 0 or max_it < 1 or trials < 1 or safety < 1.0 or delta < 0.0:
        raise ConfigError("picard/phi_norm/gate/delta settings out of range")

    return ExperimentConfig(
        mask_path=mask_path,
        output_dir=output_dir,
        horizon=horizon,
        segments=segments,
        quad_order=quad_order,
        delta=delta,
        seed=seed,
        nonlinearity_scale=scale,
        picard_tol=tol,
        picard_max_iterations=max_it,
        phi_trials=trials,
        gate_safety=safety,
        eps_schedule=[float(e) for e in schedule],
        oracle_dts=[float(d) for d in dts],
        initial_data=init,
        raw=data,
    )


def _build_initial_data(config: ExperimentConfig, spectrum, hodge) -> VectorField:
    init = config.initial_data
    kind = init["kind"]
    mask = hodge.mask
    if kind == "zero":
        return VectorField.zeros(mask)
    if kind == "eigenmode":
        mode = init["mode"]
        if not 0 <= mode < spectrum.dim:
            raise ConfigError(f"eigenmode index {mode} outside 0..{spectrum.dim - 1}")
        coords = spectrum.from_modal(
            np.eye(spectrum.dim)[mode] / mask.cell_volume ** 0.5
        )
        return hodge.lift(float(init["amplitude"]) * coords)
    if kind == "random":
        rng = np.random.default_rng(init.get("seed", config.seed + 1))
        coords = rng.standard_normal(spectrum.dim)
        coords *= float(init["amplitude"]) / (mask.cell_volume ** 0.5 * np.linalg.norm(coords))
        return hodge.lift(coords)
    # kind == "file": component-blocked array of shape (3, n) or (3n,)
    try:
        values = np.load(init["path"])
    except OSError as exc:
        raise ConfigError(f"cannot read initial data file {init['path']}: {exc}") from exc
    return VectorField.from_flat(mask, np.asarray(values, dtype=float).reshape(-1))


def run_experiment(config: ExperimentConfig) -> int:
    """Run the pipeline; write summary/norms/iterations files; return exit code."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": config.raw,
        "status": "ok",
    }

    def fail(stage, exc, code):
        summary["status"] = "failed"
        summary["failure"] = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
        _write_summary(out_dir, summary)
        return code

    try:
        mask = load_mask(config.mask_path)
    except MaskError as exc:
        return fail("mask", exc, EXIT_MASK)
    except OSError as exc:
        return fail("mask", exc, EXIT_MASK)

    ops = build_operators(mask)
    hodge = build_hodge(ops)
    spectrum = assemble_stokes(hodge, config.delta)
    summary["domain"] = {
        "dims": list(mask.dims),
        "spacing": mask.spacing,
        "cells": mask.n_cells,
        "hodge_dim": hodge.dim,
        "gradient_rank": hodge.grad_rank,
    }
    summary["spectrum"] = {
        "dim": spectrum.dim,
        "lambda_min": float(spectrum.eigenvalues[0]),
        "lambda_max": float(spectrum.eigenvalues[-1]),
        "delta": spectrum.delta,
    }

    try:
        u0 = _build_initial_data(config, spectrum, hodge)
    except ConfigError as exc:
        return fail("initial_data", exc, EXIT_CONFIG)

    grid = TimeGrid.graded(config.horizon, config.segments, config.quad_order)
    phi_hat = estimate_phi_norm(spectrum, hodge, grid, config.phi_trials, config.seed)
    # the iteration runs with scale * Phi, so the gate must guard that norm;
    # scale 0 is the linear mode, which contracts unconditionally
    linear_mode = config.nonlinearity_scale == 0.0
    phi_gate = config.gate_safety * config.nonlinearity_scale * phi_hat
    alpha = alpha_trajectory(spectrum, u0, grid)
    alpha_norms = et_norm(spectrum, alpha)
    gate_ok = linear_mode or smallness_gate(alpha_norms, phi_gate)
    summary["phi_norm"] = {"estimate": phi_hat, "safety_factor": config.gate_safety,
                           "gate_value": phi_gate}
    summary["gate"] = {"passed_initially": gate_ok, "alpha_total": alpha_norms.total,
                       "threshold": None if linear_mode else 1.0 / (4.0 * phi_gate),
                       "shrink": None}

    shrink_attempts = []
    if not gate_ok:
        try:
            shrunk = shrink_horizon(spectrum, u0, phi_gate, grid, config.eps_schedule)
        except GateUnreachableError as exc:
            summary["gate"]["shrink"] = {
                "passed": False,
                "attempts": [vars(a) for a in exc.attempts],
            }
            return fail("gate", exc, EXIT_GATE)
        shrink_attempts = shrunk.attempts
        summary["gate"]["shrink"] = {
            "passed": True,
            "eps": shrunk.eps,
            "horizon": shrunk.horizon,
            "attempts": [vars(a) for a in shrink_attempts],
        }
        u0 = shrunk.u0_smooth
        grid = shrunk.grid
        alpha_norms = et_norm(spectrum, alpha_trajectory(spectrum, u0, grid))

    picard_cfg = PicardConfig(
        grid=grid,
        tol=config.picard_tol,
        max_iterations=config.picard_max_iterations,
        nonlinearity_scale=config.nonlinearity_scale,
    )
    try:
        traj, log = picard_solve(spectrum, hodge, u0, picard_cfg)
    except PicardDivergenceError as exc:
        if exc.log is not None:
            summary["picard"] = _picard_summary(exc.log)
        return fail("picard", exc, EXIT_PICARD)
    log.alpha_norms = alpha_norms
    log.phi_norm_estimate = phi_hat
    log.smallness_ok = True
    log.horizon_shrinks = [(a.eps, a.horizon) for a in shrink_attempts]
    summary["picard"] = _picard_summary(log)

    report = strong_residual(spectrum, hodge, ops, traj, u0, config.nonlinearity_scale)
    balances = energy_audit(hodge, ops, traj)
    summary["verification"] = {
        "max_divergence": float(report.divergence_norms.max()),
        "max_residual_rel": float(report.residual_rels.max()),
        "max_gradient_match_rel": float(report.gradient_match_rels.max()),
        "max_pressure_consistency": float(report.pressure_consistency_rels.max()),
        "initial_value_error": report.initial_value_error,
        "max_energy_balance": float(np.abs(balances).max()),
        "max_convective_l32_weighted": float(report.convective_l32.max()),
    }

    oracle_results = []
    for dt in config.oracle_dts:
        try:
            oracle = imex_oracle(spectrum, hodge, u0, grid, dt, config.nonlinearity_scale)
        except OracleInstabilityError as exc:
            summary["oracle"] = oracle_results
            return fail("oracle", exc, EXIT_ORACLE)
        dev = np.linalg.norm(oracle.samples - traj.samples, axis=1).max()
        ref = max(np.linalg.norm(traj.samples, axis=1).max(), np.finfo(float).tiny)
        oracle_results.append({"dt": dt, "relative_sup_deviation": float(dev / ref)})
    summary["oracle"] = oracle_results

    _write_summary(out_dir, summary)
    _write_norms_csv(out_dir / "norms.csv", spectrum, traj)
    _write_iterations_csv(out_dir / "iterations.csv", log)
    return EXIT_OK


def _picard_summary(log) -> dict:
    return {
        "iterations": log.iterations,
        "converged": log.converged,
        "distances": list(map(float, log.distances)),
        "ratios": list(map(float, log.ratios)),
        "fixed_point_residual": log.fixed_point_residual,
        "alpha_norms": None if log.alpha_norms is None else {
            "sup_quarter": log.alpha_norms.sup_quarter,
            "sup_half_weighted": log.alpha_norms.sup_half_weighted,
            "sup_deriv_weighted": log.alpha_norms.sup_deriv_weighted,
            "total": log.alpha_norms.total,
        },
        "final_norms": {
            "sup_quarter": log.iterate_norms[-1].sup_quarter,
            "sup_half_weighted": log.iterate_norms[-1].sup_half_weighted,
            "sup_deriv_weighted": log.iterate_norms[-1].sup_deriv_weighted,
            "total": log.iterate_norms[-1].total,
        } if log.iterate_norms else None,
        "horizon_shrinks": [list(t) for t in log.horizon_shrinks],
    }


def _write_summary(out_dir: Path, summary: dict):
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )


def _write_norms_csv(path: Path, spectrum, traj):
    lam = spectrum.eigenvalues
    vol = spectrum.hodge.mask.cell_volume ** 0.5
    modal = traj.samples @ spectrum.modes
    dmodal = traj.derivative_samples @ spectrum.modes
    lines = ["t,quarter_norm,weighted_half_norm,weighted_deriv_norm"]
    for j, t in enumerate(traj.grid.nodes):
        quarter = vol * np.linalg.norm(modal[j] * lam**0.25)
        half = vol * np.linalg.norm(modal[j] * lam**0.5) * t**0.25
        deriv = (
            vol * np.linalg.norm(dmodal[j - 1] * lam**0.25) * t if j > 0 else 0.0
        )
        lines.append(",".join(_FLOAT_FMT % x for x in (t, quarter, half, deriv)))
    path.write_text("\n".join(lines) + "\n")


def _write_iterations_csv(path: Path, log):
    lines = ["iterate,et_total,distance,ratio"]
    for n, norms in enumerate(log.iterate_norms):
        dist = log.distances[n] if n < len(log.distances) else float("nan")
        ratio = log.ratios[n - 1] if 1 <= n <= len(log.ratios) else float("nan")
        lines.append(
            "%d,%s,%s,%s"
            % (n, _FLOAT_FMT % norms.total, _FLOAT_FMT % dist, _FLOAT_FMT % ratio)
        )
    path.write_text("\n".join(lines) + "\n")


def _cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = run_experiment(config)
    except MildflowError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1
    if code != EXIT_OK:
        print(f"run failed with exit code {code} (see summary.json)", file=sys.stderr)
    return code


def _cmd_validate(args) -> int:
    try:
        load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def _cmd_mask_info(args) -> int:
    try:
        mask = load_mask(args.mask)
    except (MaskError, OSError) as exc:
        print(f"mask error: {exc}", file=sys.stderr)
        return EXIT_MASK
    nx, ny, nz = mask.dims
    print(f"dims: {nx} x {ny} x {nz}")
    print(f"spacing: {mask.spacing}")
    print(f"occupied cells: {mask.n_cells} of {nx * ny * nz}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mildflow",
        description="Mild/strong solution experiments on voxel domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a full experiment")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)
    p_val = sub.add_parser("validate", help="parse and check a config only")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)
    p_info = sub.add_parser("mask-info", help="inspect a mask file")
    p_info.add_argument("mask")
    p_info.set_defaults(func=_cmd_mask_info)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
