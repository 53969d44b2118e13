"""Batch front end: declarative JSON configs in, data + plots out.

Usage:

    dressedspin run <config.json> [--seed N] [--out-dir DIR] [--n-traj N]
    dressedspin plot <data.csv> <plotspec.json>
    dressedspin list-experiments

A config names one experiment and overrides any physics parameters:

    {
      "experiment": "ats_odmr",
      "seed": 42,
      "out_dir": "results/fig3c",
      "drive": {"omega": 2837.05, "b_drive": 33.0},
      "grid": {"start": 2835.2, "stop": 2838.9, "step": 0.05}
    }

Unknown keys anywhere in the config are rejected.  Exit codes: 0 on
success, 2 for config errors, 3 for physics-domain errors, 4 for fit
failures.  Identical (config, seed) runs write byte-identical data
files.  ``DRESSEDSPIN_OUT_DIR`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .analysis import FitError, FitResult
from .dynamics import InitMode, NoiseModel, ReadoutModel
from .nvmodel import DriveField, NVParams, PhysicsError
from . import experiments as xp
from . import sensing
from .io import RunManifest, atomic_write_text, config_hash, write_csv, write_manifest
from .plots import PlotSpecError, render_plot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHYSICS = 3
EXIT_FIT = 4


class ConfigError(ValueError):
    """Configuration file is syntactically or semantically invalid."""


# ---------------------------------------------------------------------------
# Config parsing

TOP_KEYS = {"experiment", "seed", "n_traj", "out_dir", "nv", "drive", "noise", "readout", "grid"}
NV_KEYS = {"d", "gamma", "a_hf", "b0"}
DRIVE_KEYS = {"omega", "b_drive", "phase"}
NOISE_KEYS = {"tau_c", "sigma_b"}
READOUT_KEYS = {"contrast", "baseline", "init_mode", "init_fidelity"}

GRID_KEYS = {
    "pulsed_odmr": {"start", "stop", "step"},
    "ats_odmr": {"start", "stop", "step"},
    "drive_power_sweep": {"drive_freqs", "b_drive_ut", "scan_step"},
    "drive_detuning_sweep": {"b_drive_ut", "detuning_start", "detuning_stop", "detuning_step", "scan_step"},
    "rabi_scan": {"dressed", "probe_rabi", "drive_rabi", "t_max", "n_points"},
    "echo_scan": {"dressed", "probe_rabi", "drive_rabi", "tau_start", "tau_stop", "n_points"},
    "calibrate_noise": {"target_t2", "tau_c", "n_traj"},
    "sensing_report": {"m_pairs", "t2_rho_ms", "t2_us", "amplitude_ut", "freq_khz"},
}

EXPERIMENT_SUMMARIES = {
    "pulsed_odmr": "hyperfine-resolved ODMR dips with a weak pulsed probe",
    "ats_odmr": "probe spectrum under a continuous drive (split triplet)",
    "drive_power_sweep": "triplet positions versus drive amplitude",
    "drive_detuning_sweep": "triplet positions versus drive frequency",
    "rabi_scan": "probe Rabi oscillation, dressed or undressed",
    "echo_scan": "phase-cycled echo decay, dressed or undressed",
    "calibrate_noise": "bisect the bath amplitude to a target echo time",
    "sensing_report": "AC-sensing enhancement and responsivity report",
}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}; allowed: {sorted(allowed)}")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path!r} is not valid JSON: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    _check_keys(cfg, TOP_KEYS, "config root")
    kind = cfg.get("experiment")
    if kind not in GRID_KEYS:
        raise ConfigError(
            f"unknown experiment {kind!r}; run `dressedspin list-experiments`"
        )
    for name, allowed in (("nv", NV_KEYS), ("drive", DRIVE_KEYS), ("noise", NOISE_KEYS), ("readout", READOUT_KEYS)):
        section = cfg.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        _check_keys(section, allowed, f"section {name!r}")
    grid = cfg.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("section 'grid' must be an object")
    _check_keys(grid, GRID_KEYS[kind], f"grid for {kind!r}")
    return cfg


def _build_objects(cfg: dict):
    try:
        p = NVParams(**cfg.get("nv", {}))
        drive = DriveField(**cfg["drive"]) if "drive" in cfg else None
        noise_sec = dict(cfg.get("noise", {}))
        nm = NoiseModel(
            tau_c=noise_sec.get("tau_c", xp.DEFAULT_NOISE.tau_c),
            sigma_b=noise_sec.get("sigma_b", xp.DEFAULT_NOISE.sigma_b),
            seed=int(cfg.get("seed", xp.DEFAULT_NOISE.seed)),
            n_traj=int(cfg.get("n_traj", xp.DEFAULT_NOISE.n_traj)),
        )
        ro = None
        if "readout" in cfg:
            sec = dict(cfg["readout"])
            if "init_mode" in sec:
                sec["init_mode"] = InitMode(sec["init_mode"])
            ro = ReadoutModel(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameter value: {exc}") from exc
    return p, drive, nm, ro


def _fit_payload(fit: FitResult) -> dict:
    return {
        "params": fit.params,
        "uncertainties": fit.uncertainties,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "residual_norm": fit.residual_norm,
        "message": fit.message,
    }


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Experiment runners: each returns (output files, fits payload)


def _spectrum_files(out_dir, tag, result, chash, extra=None):
    path = os.path.join(out_dir, f"{tag}.csv")
    write_csv(
        path,
        [
            ("probe_frequency", "MHz", result.spectrum.x),
            ("contrast", "1", result.spectrum.y),
            ("stderr", "1", result.spectrum.y_err),
        ],
        comments=[f"config_hash={chash}", f"experiment={tag}"],
    )
    svg = os.path.join(out_dir, f"{tag}.svg")
    render_plot(path, {"kind": "spectrum", "title": tag}, svg)
    payload = {
        "peaks_mhz": result.peaks.tolist(),
        "peak_errors_mhz": result.peak_errors.tolist(),
        "empty": bool(result.empty),
    }
    if extra:
        payload.update(extra)
    return [path, svg], payload


def _run_pulsed_odmr(cfg, p, drive, nm, ro, out_dir, chash):
    grid = cfg.get("grid", {})
    scan = None
    if grid:
        scan = np.arange(grid["start"], grid["stop"] + 1e-12, grid["step"])
    result = xp.pulsed_odmr(p, scan, nm, ro or ReadoutModel())
    files, payload = _spectrum_files(out_dir, "pulsed_odmr", result, chash)
    if result.peaks.size >= 2:
        payload["dip_spacings_mhz"] = np.diff(result.peaks).tolist()
    return files, payload


def _run_ats_odmr(cfg, p, drive, nm, ro, out_dir, chash):
    grid = cfg.get("grid", {})
    if drive is None:
        drive = DriveField(omega=2837.05, b_drive=33.0)
    scan = None
    if grid:
        scan = np.arange(grid["start"], grid["stop"] + 1e-12, grid["step"])
    result = xp.ats_odmr(p, drive, scan, nm, ro)
    extra = {}
    try:
        fit = xp.fit_mollow(result.spectrum)
        extra["mollow_fit"] = _fit_payload(fit)
    except FitError as exc:
        extra["mollow_fit"] = {"error": str(exc)}
    files, payload = _spectrum_files(out_dir, "ats_odmr", result, chash, extra)
    return files, payload


def _sweep_files(out_dir, tag, sweep, control_unit, chash):
    cols = [("control", control_unit, sweep.control)]
    branches = []
    for j, name in enumerate(("low", "centre", "high")):
        vals = np.full(sweep.control.size, np.nan)
        errs = np.full(sweep.control.size, np.nan)
        for i, (pos, err) in enumerate(zip(sweep.peak_positions, sweep.peak_errors)):
            if len(pos) == 3:
                vals[i], errs[i] = pos[j], err[j]
            elif len(pos) == 1 and name == "centre":
                vals[i], errs[i] = pos[0], err[0]
        branches.append((f"peak_{name}", "MHz", vals))
        branches.append((f"err_{name}", "MHz", errs))
    path = os.path.join(out_dir, f"{tag}.csv")
    write_csv(path, cols + branches, comments=[f"config_hash={chash}", f"experiment={tag}"])
    svg = os.path.join(out_dir, f"{tag}.svg")
    render_plot(path, {"kind": "sweep", "title": sweep.label or tag}, svg)
    return [path, svg]


def _run_power_sweep(cfg, p, drive, nm, ro, out_dir, chash):
    grid = cfg.get("grid", {})
    freqs = tuple(grid.get("drive_freqs", xp.DMW_FREQUENCIES))
    b_grid = tuple(grid.get("b_drive_ut", (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)))
    step = grid.get("scan_step", 0.05)
    sweeps = xp.drive_power_sweep(p, freqs, b_grid, nm, scan_step=step)
    files, payload = [], {}
    for sweep in sweeps:
        f_d = sweep.meta["drive_freq"]
        tag = f"power_sweep_{f_d:.2f}MHz"
        files += _sweep_files(out_dir, tag, sweep, "uT", chash)
        lines = xp.power_sweep_lines(sweep)
        payload[tag] = {name: _fit_payload(fit) for name, fit in lines.items()}
    return files, payload


def _run_detuning_sweep(cfg, p, drive, nm, ro, out_dir, chash):
    grid = cfg.get("grid", {})
    b_drive = grid.get("b_drive_ut", 33.0)
    detunings = None
    if {"detuning_start", "detuning_stop", "detuning_step"} <= set(grid):
        detunings = np.arange(
            grid["detuning_start"], grid["detuning_stop"] + 1e-12, grid["detuning_step"]
        )
    sweep = xp.drive_detuning_sweep(
        p, b_drive, detunings, nm=nm, scan_step=grid.get("scan_step", 0.05)
    )
    files = _sweep_files(out_dir, "detuning_sweep", sweep, "MHz", chash)
    fitinfo = xp.detuning_sweep_fit(sweep)
    payload = {
        "rabi0_fit": _fit_payload(fitinfo["rabi0_fit"]),
        "central_line": _fit_payload(fitinfo["central_line"]),
        "side_sum_identity": fitinfo["side_sum_identity"].tolist(),
        "side_sum_identity_err": fitinfo["side_sum_identity_err"].tolist(),
    }
    return files, payload


def _curve_files(out_dir, tag, curve, chash):
    path = os.path.join(out_dir, f"{tag}.csv")
    write_csv(
        path,
        [("time", "us", curve.t), ("signal", "1", curve.y), ("stderr", "1", curve.y_err)],
        comments=[f"config_hash={chash}", f"experiment={tag}"],
    )
    svg = os.path.join(out_dir, f"{tag}.svg")
    render_plot(path, {"kind": "decay", "title": tag}, svg)
    return [path, svg]


def _run_rabi(cfg, p, drive, nm, ro, out_dir, chash):
    grid = cfg.get("grid", {})
    dressed = bool(grid.get("dressed", False))
    probe = grid.get("probe_rabi", xp.ECHO_PROBE_RABI)
    durations = None
    if "t_max" in grid:
        durations = np.linspace(0.08, grid["t_max"], int(grid.get("n_points", 40)))
    if dressed:
        line = float(xp.transition_frequencies(p)[0])
        drive = DriveField(omega=line, b_drive=grid.get("drive_rabi", xp.ECHO_DRIVE_RABI) / p.gamma * 1e3)
    else:
        drive = None
    result = xp.rabi_scan(p, drive, probe, durations, nm)
    files = _curve_files(out_dir, "rabi_scan", result.curve, chash)
    if not result.fit.converged:
        raise FitError(f"Rabi fit failed: {result.fit.message}")
    return files, {"fit": _fit_payload(result.fit)}


def _run_echo(cfg, p, drive, nm, ro, out_dir, chash):
    grid = cfg.get("grid", {})
    dressed = bool(grid.get("dressed", False))
    taus = None
    if {"tau_start", "tau_stop", "n_points"} <= set(grid):
        taus = np.linspace(grid["tau_start"], grid["tau_stop"], int(grid["n_points"]))
    result = xp.echo_scan(
        p,
        dressed=dressed,
        taus=taus,
        probe_rabi=grid.get("probe_rabi", xp.ECHO_PROBE_RABI),
        drive_rabi=grid.get("drive_rabi", xp.ECHO_DRIVE_RABI),
        nm=nm,
    )
    tag = "echo_dressed" if dressed else "echo_undressed"
    files = _curve_files(out_dir, tag, result.curve, chash)
    if not (result.fit.converged or result.fit.message.startswith("window")):
        raise FitError(f"echo decay fit failed: {result.fit.message}")
    return files, {"fit": _fit_payload(result.fit), "t2_us": result.t2}


def _run_calibration(cfg, p, drive, nm, ro, out_dir, chash):
    grid = cfg.get("grid", {})
    result = xp.calibrate_noise(
        p,
        target_t2=grid.get("target_t2", 4.2),
        tau_c=grid.get("tau_c", nm.tau_c),
        seed=nm.seed,
        n_traj=int(grid.get("n_traj", min(nm.n_traj, 600))),
    )
    hist = np.asarray(result.history)
    path = os.path.join(out_dir, "calibration_history.csv")
    write_csv(
        path,
        [("sigma_b", "MHz", hist[:, 0]), ("t2", "us", hist[:, 1])],
        comments=[f"config_hash={chash}", "experiment=calibrate_noise"],
    )
    payload = {
        "sigma_b": result.sigma_b,
        "achieved_t2_us": result.achieved_t2,
        "target_t2_us": result.target_t2,
        "iterations": result.iterations,
    }
    return [path], payload


def _run_sensing(cfg, p, drive, nm, ro, out_dir, chash):
    grid = cfg.get("grid", {})
    scfg = sensing.SensingConfig(
        m_pairs=int(grid.get("m_pairs", 2)),
        t2_rho_ms=grid.get("t2_rho_ms", 1.5),
        t2_us=grid.get("t2_us", 4.2),
    )
    ac = sensing.ACField(
        amplitude_ut=grid.get("amplitude_ut", 1.0),
        freq_khz=grid.get("freq_khz", 10.0),
    )
    rep = sensing.protocol_sensitivity(scfg, ac, gamma_mhz_mt=p.gamma)
    payload = {
        "enhancement": rep.enhancement,
        "enhancement_rounded": rep.enhancement_rounded,
        "optimal_tau_us": rep.optimal_tau_us,
        "phase_per_ut_rad": rep.phase_per_ut,
        "m_pairs": scfg.m_pairs,
        "t2_rho_ms": scfg.t2_rho_ms,
        "t2_us": scfg.t2_us,
    }
    return [], payload


RUNNERS = {
    "pulsed_odmr": _run_pulsed_odmr,
    "ats_odmr": _run_ats_odmr,
    "drive_power_sweep": _run_power_sweep,
    "drive_detuning_sweep": _run_detuning_sweep,
    "rabi_scan": _run_rabi,
    "echo_scan": _run_echo,
    "calibrate_noise": _run_calibration,
    "sensing_report": _run_sensing,
}


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.n_traj is not None:
        cfg["n_traj"] = args.n_traj
    out_dir = args.out_dir or cfg.get("out_dir") or os.environ.get("DRESSEDSPIN_OUT_DIR") or "."
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(cfg)
    p, drive, nm, ro = _build_objects(cfg)
    t0 = time.perf_counter()
    files, payload = RUNNERS[cfg["experiment"]](cfg, p, drive, nm, ro, out_dir, chash)
    fits_path = os.path.join(out_dir, "fits.json")
    atomic_write_text(fits_path, _json_dump(payload))
    files = files + [fits_path]
    manifest = RunManifest(
        config_hash=chash,
        seed=int(cfg.get("seed", xp.DEFAULT_NOISE.seed)),
        version=__version__,
        duration_s=round(time.perf_counter() - t0, 3),
        outputs=[os.path.basename(f) for f in files],
    )
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest_path, manifest)
    print(f"{cfg['experiment']}: wrote {len(files) + 1} files to {out_dir}")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        with open(args.plotspec) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load plot spec {args.plotspec!r}: {exc}") from exc
    out = spec.get("output") or os.path.splitext(args.data)[0] + ".svg"
    try:
        render_plot(args.data, spec, out)
    except PlotSpecError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"wrote {out}")
    return EXIT_OK


def cmd_list(_args) -> int:
    for name in sorted(RUNNERS):
        print(f"{name:22s} {EXPERIMENT_SUMMARIES[name]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dressedspin",
        description="Driven NV-centre experiments: batch simulation and plotting.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out-dir", default=None, help="override the output directory")
    p_run.add_argument("--n-traj", type=int, default=None, help="override the trajectory count")
    p_run.set_defaults(func=cmd_run)

    p_plot = sub.add_parser("plot", help="render a data file to SVG")
    p_plot.add_argument("data")
    p_plot.add_argument("plotspec")
    p_plot.set_defaults(func=cmd_plot)

    p_list = sub.add_parser("list-experiments", help="list available experiments")
    p_list.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhysicsError as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
