"""Canned studies: convergence-rate measurements, regularity regression, probes.

Every study is a pure function of (configuration, base seed): per-sample seeds
are base xor sample index, aggregation is an order-independent reduction over
sample indices, and output files carry a fingerprint of the resolved
configuration instead of timestamps, so reruns are byte-identical.

Rate studies couple their discretization levels pathwise: each sample draws one
fine noise path and every level consumes a restriction of it (checked through
the lineage records), so level differences measure discretization error rather
than independent noise.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from .config import fingerprint_config
from .density import collect_samples, kde, positivity_report
from .errors import ConfigError, SchsimError
from .integrator import (
    SchemeConfig,
    difference_norm,
    export_trajectory_csv,
    initial_state,
    make_basis,
    reference_solution,
    run_scheme,
    run_split_scheme,
)
from .malliavin import nondegeneracy_probe
from .model import ModelSpec
from .noise import NoisePath, ShiftSpec, coarsen, sample

STUDY_KINDS = (
    "temporal_rate",
    "spatial_rate",
    "regularity",
    "malliavin_probe",
    "density_study",
    "single_run",
)

MAX_RELATIVE_STDERR = 0.30


@dataclass(frozen=True)
class StudyConfig:
    """One study: the model, the base discretization, and study-specific grids."""

    study: str
    model: ModelSpec
    scheme: SchemeConfig
    samples: int = 1
    seed: int = 0
    out_dir: str | None = None
    error_norm: float = 0.0                 # Sobolev exponent of the comparison norm
    step_levels: tuple[int, ...] = ()       # temporal_rate
    ref_steps: int | None = None
    mode_levels: tuple[int, ...] = ()       # spatial_rate
    ref_modes: int | None = None
    lags: tuple[int, ...] = ()              # regularity
    anchor_stride: int | None = None
    points: tuple[float, ...] = ()          # probe / density evaluation points
    epsilons: tuple[float, ...] | None = None
    shift: ShiftSpec | None = None          # density_study under shifted noise
    grid_points: int | None = None
    tau_relative: float = 1e-6
    region_quantiles: tuple[float, float] = (0.05, 0.95)
    emit_grid: bool = False

    def __post_init__(self):
        if self.study not in STUDY_KINDS:
            raise ConfigError(f"unknown study kind {self.study!r}; choose from {STUDY_KINDS}")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class RateLevel:
    value: float        # abscissa: dt, lambda_N, or lag * dt
    error: float        # root-mean-square error at this level
    stderr: float       # Monte Carlo standard error of the RMS error
    samples: int


@dataclass(frozen=True)
class RateReport:
    study: str
    levels: tuple[RateLevel, ...]
    slope: float | None
    ci_low: float | None
    ci_high: float | None
    slope_reason: str | None
    fingerprint: str
    meta: dict = dc_field(default_factory=dict)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _assert_coupled(level_path: NoisePath, fine_path: NoisePath) -> None:
    # Coupling discipline: every level consumes a restriction of the same draw.
    if level_path.root != fine_path.root:
        raise SchsimError("coupling violation: level path does not derive from the fine path")


def _fan_seed(base: int, i: int) -> int:
    return (int(base) ^ i) % 2**64


# ---------------------------------------------------------------------------
# log-log slope fitting with MC error propagation
# ---------------------------------------------------------------------------

def fit_loglog(values, errors, stderrs) -> tuple[float | None, float | None, float | None, str | None]:
    """Ordinary least-squares slope of log(error) against log(value).

    The point estimate is unweighted so that it measures the shape of the
    error curve itself.  Level standard errors propagate through the log
    transform as relative errors and give the slope's 95% CI; a level whose
    relative standard error exceeds 30% makes the fit unreliable, so no slope
    is reported.  Deterministic inputs (all-zero stderr) fall back to a
    residual-based CI.
    """
    x = np.log(np.asarray(values, dtype=float))
    err = np.asarray(errors, dtype=float)
    se = np.asarray(stderrs, dtype=float)
    if np.any(err <= 0):
        return None, None, None, "a level has zero error; nothing to regress"
    if len(x) < 3:
        return None, None, None, "slope fit needs at least 3 levels"
    rel = se / err
    if np.any(rel > MAX_RELATIVE_STDERR):
        worst = float(np.max(rel))
        return None, None, None, (
            f"level relative standard error {worst:.2f} exceeds {MAX_RELATIVE_STDERR:.2f}; "
            "increase the sample count"
        )
    y = np.log(err)
    xm = x - x.mean()
    sxx = float(np.sum(xm**2))
    slope = float(np.sum(xm * (y - y.mean())) / sxx)
    if np.all(rel < 1e-14):
        resid = y - (y.mean() + slope * xm)
        dof = len(x) - 2
        var = float(np.sum(resid**2) / dof / sxx) if dof > 0 else 0.0
    else:
        var = float(np.sum((xm / sxx) ** 2 * rel**2))
    half = 1.96 * math.sqrt(var)
    return slope, slope - half, slope + half, None


def _aggregate(sq_errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-square errors and the standard error of the RMS (delta method)."""
    ms = sq_errors.mean(axis=0)
    m = sq_errors.shape[0]
    if m > 1:
        se_ms = sq_errors.std(axis=0, ddof=1) / math.sqrt(m)
    else:
        se_ms = np.zeros_like(ms)
    rms = np.sqrt(ms)
    with np.errstate(divide="ignore", invalid="ignore"):
        se_rms = np.where(rms > 0, se_ms / (2.0 * np.maximum(rms, 1e-300)), 0.0)
    return rms, se_rms


# ---------------------------------------------------------------------------
# Per-sample workers (top level, picklable for the process pool)
# ---------------------------------------------------------------------------

def _temporal_sample(args) -> list[float]:
    cfg, i = args
    model = cfg.model
    ref_cfg = replace(cfg.scheme, n_steps=cfg.ref_steps)
    basis = make_basis(model, ref_cfg)
    x0 = initial_state(model, basis)
    fine = sample(_fan_seed(cfg.seed, i), ref_cfg.resolved_noise_modes, cfg.ref_steps, ref_cfg.dt)
    ref = reference_solution(x0, fine, model, ref_cfg)
    out = []
    for steps in cfg.step_levels:
        level_cfg = replace(cfg.scheme, n_steps=steps)
        path = coarsen(fine, cfg.ref_steps // steps)
        _assert_coupled(path, fine)
        traj = run_scheme(x0, path, model, level_cfg)
        out.append(difference_norm(traj.final_coeffs, ref.final_coeffs, basis, cfg.error_norm) ** 2)
    return out


def _spatial_sample(args) -> list[float]:
    cfg, i = args
    model = cfg.model
    ref_cfg = replace(cfg.scheme, n_modes=cfg.ref_modes)
    ref_basis = make_basis(model, ref_cfg)
    fine = sample(_fan_seed(cfg.seed, i), ref_cfg.resolved_noise_modes, ref_cfg.n_steps, ref_cfg.dt)
    ref = reference_solution(initial_state(model, ref_basis), fine, model, ref_cfg)
    out = []
    for n in cfg.mode_levels:
        level_cfg = replace(cfg.scheme, n_modes=n)
        basis = make_basis(model, level_cfg)
        path = coarsen(fine, 1, level_cfg.resolved_noise_modes)
        _assert_coupled(path, fine)
        traj = run_scheme(initial_state(model, basis), path, model, level_cfg)
        out.append(difference_norm(traj.final_coeffs, ref.final_coeffs, ref_basis, cfg.error_norm) ** 2)
    return out


def _regularity_sample(args) -> list[float]:
    cfg, i = args
    model = cfg.model
    run_cfg = replace(cfg.scheme, store_full=True)
    basis = make_basis(model, run_cfg)
    path = sample(_fan_seed(cfg.seed, i), run_cfg.resolved_noise_modes, run_cfg.n_steps, run_cfg.dt)
    traj = run_scheme(initial_state(model, basis), path, model, run_cfg)
    stride = cfg.anchor_stride or max(1, run_cfg.n_steps // 64)
    out = []
    for lag in cfg.lags:
        anchors = range(0, run_cfg.n_steps - lag + 1, stride)
        diffs = traj.states[[a + lag for a in anchors]] - traj.states[list(anchors)]
        if cfg.error_norm == 0.0:
            sq = np.sum(diffs**2, axis=1)
        else:
            w = basis.eigenvalues ** cfg.error_norm
            sq = np.sum(w * diffs**2, axis=1)
        out.append(float(sq.mean()))
    return out


def _probe_sample(args) -> float:
    # imported lazily to keep the worker import graph light
    from .malliavin import malliavin_matrix

    model, scheme, points, seed = args
    run_cfg = replace(scheme, store_full=True)
    basis = make_basis(model, run_cfg)
    path = sample(seed, run_cfg.resolved_noise_modes, run_cfg.n_steps, run_cfg.dt)
    traj = run_scheme(initial_state(model, basis), path, model, run_cfg)
    return malliavin_matrix(traj, path, points, model, run_cfg).lambda_min


def _map_samples(worker, tasks, threads: int):
    if threads <= 1:
        return [worker(t) for t in tasks]
    chunk = max(1, len(tasks) // (8 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, tasks, chunksize=chunk))


# ---------------------------------------------------------------------------
# Rate studies
# ---------------------------------------------------------------------------

def run_temporal_rate(cfg: StudyConfig, threads: int = 1) -> RateReport:
    """Mean-square error against a time-refined reference, slope in log dt."""
    if len(cfg.step_levels) < 3:
        raise ConfigError("temporal_rate needs at least 3 step_levels")
    if cfg.ref_steps is None:
        raise ConfigError("temporal_rate needs ref_steps")
    levels = tuple(sorted(set(cfg.step_levels), reverse=True))  # ascending dt
    if not all(_is_power_of_two(k) for k in levels + (cfg.ref_steps,)):
        raise ConfigError("all step counts must be powers of two (dyadic step sizes)")
    if cfg.ref_steps < 8 * max(levels):
        raise ConfigError(
            f"reference must be at least 8x finer in time: ref_steps={cfg.ref_steps} "
            f"vs finest level {max(levels)}"
        )
    run_cfg = replace(cfg, step_levels=levels)
    sq = np.asarray(
        _map_samples(_temporal_sample, [(run_cfg, i) for i in range(cfg.samples)], threads)
    )
    rms, se = _aggregate(sq)
    dt_values = [cfg.model.horizon / k for k in levels]
    slope, lo, hi, reason = fit_loglog(dt_values, rms, se)
    report_levels = tuple(
        RateLevel(float(v), float(e), float(s), cfg.samples) for v, e, s in zip(dt_values, rms, se)
    )
    return RateReport(
        study="temporal_rate", levels=report_levels, slope=slope, ci_low=lo, ci_high=hi,
        slope_reason=reason, fingerprint=fingerprint_config(cfg),
        meta={"abscissa": "dt", "n_modes": cfg.scheme.n_modes, "ref_steps": cfg.ref_steps},
    )


def run_spatial_rate(cfg: StudyConfig, threads: int = 1) -> RateReport:
    """Mean-square error against a mode-refined reference, slope in log lambda_N.

    The reported slope is the decay rate in lambda_N; meta carries the
    equivalent rate in N (twice as large, since lambda_N grows like N^2).
    """
    if len(cfg.mode_levels) < 3:
        raise ConfigError("spatial_rate needs at least 3 mode_levels")
    if cfg.ref_modes is None:
        raise ConfigError("spatial_rate needs ref_modes")
    levels = tuple(sorted(set(cfg.mode_levels)))
    if cfg.ref_modes < 2 * max(levels):
        raise ConfigError(
            f"reference must resolve at least twice the modes: ref_modes={cfg.ref_modes} "
            f"vs largest level {max(levels)}"
        )
    if not _is_power_of_two(cfg.scheme.n_steps):
        raise ConfigError("spatial_rate step count must be a power of two (dyadic step size)")
    run_cfg = replace(cfg, mode_levels=levels)
    sq = np.asarray(
        _map_samples(_spatial_sample, [(run_cfg, i) for i in range(cfg.samples)], threads)
    )
    rms, se = _aggregate(sq)
    lam = [(n * math.pi / cfg.model.length) ** 2 for n in levels]
    # error decays in lambda_N: fit against 1/lambda_N so the slope is the decay rate
    slope, lo, hi, reason = fit_loglog([1.0 / v for v in lam], rms, se)
    report_levels = tuple(
        RateLevel(float(v), float(e), float(s), cfg.samples) for v, e, s in zip(lam, rms, se)
    )
    meta = {
        "abscissa": "lambda_N",
        "n_steps": cfg.scheme.n_steps,
        "ref_modes": cfg.ref_modes,
        "rate_in_modes": None if slope is None else 2.0 * slope,
    }
    return RateReport(
        study="spatial_rate", levels=report_levels, slope=slope, ci_low=lo, ci_high=hi,
        slope_reason=reason, fingerprint=fingerprint_config(cfg), meta=meta,
    )


def run_regularity(cfg: StudyConfig, threads: int = 1) -> RateReport:
    """Slope of log RMS increment against log lag over a dyadic lag grid."""
    if len(cfg.lags) < 3:
        raise ConfigError("regularity needs at least 3 lags")
    lags = tuple(sorted(set(cfg.lags)))
    if lags[0] < 1 or lags[-1] > cfg.scheme.n_steps:
        raise ConfigError(f"lags must lie in 1..{cfg.scheme.n_steps}")
    if lags[-1] / lags[0] < 100:
        raise ConfigError("lag grid too narrow: it must span at least two decades")
    run_cfg = replace(cfg, lags=lags)
    vals = np.asarray(
        _map_samples(_regularity_sample, [(run_cfg, i) for i in range(cfg.samples)], threads)
    )
    rms, se = _aggregate(vals)
    dt = cfg.scheme.horizon / cfg.scheme.n_steps
    lag_times = [lag * dt for lag in lags]
    slope, lo, hi, reason = fit_loglog(lag_times, rms, se)
    report_levels = tuple(
        RateLevel(float(v), float(e), float(s), cfg.samples) for v, e, s in zip(lag_times, rms, se)
    )
    return RateReport(
        study="regularity", levels=report_levels, slope=slope, ci_low=lo, ci_high=hi,
        slope_reason=reason, fingerprint=fingerprint_config(cfg),
        meta={"abscissa": "lag_time", "lags": list(lags)},
    )


# ---------------------------------------------------------------------------
# Probe studies and the single-run smoke study
# ---------------------------------------------------------------------------

def run_malliavin_probe(cfg: StudyConfig, threads: int = 1):
    if len(cfg.points) < 1:
        raise ConfigError("malliavin_probe needs evaluation points")
    # precondition and epsilon handling live in the probe itself; parallel path
    # computes the per-sample eigenvalues with the same seeds
    if threads <= 1:
        return nondegeneracy_probe(
            cfg.model, cfg.scheme, cfg.points, cfg.samples, cfg.seed, epsilons=cfg.epsilons
        )
    from .malliavin import DEFAULT_EPSILON_FACTORS, ProbeResult
    from .errors import DegenerateDiffusionError

    if cfg.model.diffusion.lower_bound <= 0.0:
        raise DegenerateDiffusionError(
            f"probe requires a diffusion bounded below by a positive constant; "
            f"family {cfg.model.diffusion.family!r} has floor {cfg.model.diffusion.lower_bound}"
        )
    tasks = [
        (cfg.model, cfg.scheme, cfg.points, _fan_seed(cfg.seed, i)) for i in range(cfg.samples)
    ]
    lam_mins = np.asarray(_map_samples(_probe_sample, tasks, threads))
    if cfg.epsilons is None:
        eps = np.asarray(DEFAULT_EPSILON_FACTORS) * float(np.median(lam_mins))
    else:
        eps = np.asarray(cfg.epsilons, dtype=float)
    fractions = np.array([float(np.mean(lam_mins <= e)) for e in eps])
    return ProbeResult(eps, fractions, lam_mins)


def run_density_study(cfg: StudyConfig):
    if len(cfg.points) < 1:
        raise ConfigError("density_study needs evaluation points")
    samples = collect_samples(
        cfg.model, cfg.scheme, cfg.points, cfg.samples, cfg.seed, shift_spec=cfg.shift
    )
    estimate = kde(samples, grid_points=cfg.grid_points)
    lo_q, hi_q = cfg.region_quantiles
    region = tuple(
        (float(np.quantile(samples.samples[:, i], lo_q)), float(np.quantile(samples.samples[:, i], hi_q)))
        for i in range(samples.dimension)
    )
    tau = cfg.tau_relative * float(estimate.values.max())
    report = positivity_report(estimate, region, tau)
    return samples, estimate, report


def run_single(cfg: StudyConfig):
    """Run a few trajectories, report diagnostics including the split-scheme gap."""
    model = cfg.model
    basis = make_basis(model, cfg.scheme)
    x0 = initial_state(model, basis)
    per_sample = []
    first_traj = None
    for i in range(cfg.samples):
        path = sample(_fan_seed(cfg.seed, i), cfg.scheme.resolved_noise_modes,
                      cfg.scheme.n_steps, cfg.scheme.dt)
        traj = run_scheme(x0, path, model, cfg.scheme)
        y_traj, z_traj = run_split_scheme(x0, path, model, cfg.scheme)
        gap = float(np.linalg.norm(y_traj.final_coeffs + z_traj.final_coeffs - traj.final_coeffs))
        per_sample.append({
            "sample": i,
            "final_l2_norm": float(np.linalg.norm(traj.final_coeffs)),
            "max_newton_iters": int(traj.newton_iters.max()),
            "mean_newton_iters": float(traj.newton_iters.mean()),
            "split_gap": gap,
        })
        if first_traj is None:
            first_traj = traj
    return first_traj, per_sample


# ---------------------------------------------------------------------------
# Output writing and the study dispatcher
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_errors_csv(path: Path, report: RateReport) -> None:
    lines = ["level,value,error,stderr,samples"]
    for idx, lev in enumerate(report.levels):
        lines.append(f"{idx},{_fmt(lev.value)},{_fmt(lev.error)},{_fmt(lev.stderr)},{lev.samples}")
    path.write_text("\n".join(lines) + "\n")


def write_report_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _rate_report_payload(report: RateReport) -> dict:
    return {
        "study": report.study,
        "slope": report.slope,
        "ci_low": report.ci_low,
        "ci_high": report.ci_high,
        "slope_reason": report.slope_reason,
        "fingerprint": report.fingerprint,
        "meta": report.meta,
        "levels": [
            {"value": lev.value, "error": lev.error, "stderr": lev.stderr, "samples": lev.samples}
            for lev in report.levels
        ],
    }


def run_study(cfg: StudyConfig, threads: int = 1) -> dict:
    """Execute the configured study, write its files, and return the report payload."""
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    fp = fingerprint_config(cfg)

    if cfg.study in ("temporal_rate", "spatial_rate", "regularity"):
        runner = {
            "temporal_rate": run_temporal_rate,
            "spatial_rate": run_spatial_rate,
            "regularity": run_regularity,
        }[cfg.study]
        report = runner(cfg, threads)
        payload = _rate_report_payload(report)
        if out is not None:
            write_errors_csv(out / "errors.csv", report)
            write_report_json(out / "report.json", payload)
        return payload

    if cfg.study == "malliavin_probe":
        probe = run_malliavin_probe(cfg, threads)
        payload = {
            "study": cfg.study,
            "fingerprint": fp,
            "lambda_min_quantiles": probe.quantiles(),
            "sample_count": probe.sample_count,
            "positive_fraction": float(np.mean(probe.lambda_mins > 0)),
        }
        if out is not None:
            lines = ["epsilon,empirical_fraction,sample_count"]
            for eps, frac in zip(probe.epsilons, probe.fractions):
                lines.append(f"{_fmt(eps)},{_fmt(frac)},{probe.sample_count}")
            (out / "probe.csv").write_text("\n".join(lines) + "\n")
            write_report_json(out / "report.json", payload)
        return payload

    if cfg.study == "density_study":
        samples, estimate, report = run_density_study(cfg)
        payload = {
            "study": cfg.study,
            "fingerprint": fp,
            "bandwidth": [float(h) for h in estimate.bandwidth],
            "mass": estimate.mass(),
            "positivity": {
                "region": [list(r) for r in report.region],
                "threshold": report.threshold,
                "fraction_above": report.fraction_above,
                "min_density": report.min_density,
                "zero_cells": report.zero_cells,
                "cells": report.cells,
            },
        }
        if out is not None:
            d = samples.dimension
            header = ",".join(f"p{i + 1}" for i in range(d))
            lines = [header]
            for row in samples.samples:
                lines.append(",".join(_fmt(v) for v in row))
            (out / "samples.csv").write_text("\n".join(lines) + "\n")

            axis_names = [f"x{i + 1}" for i in range(d)]
            lines = [",".join(axis_names) + ",density"]
            mesh = np.meshgrid(*estimate.axes, indexing="ij")
            flat = [m.ravel() for m in mesh] + [estimate.values.ravel()]
            for vals in zip(*flat):
                lines.append(",".join(_fmt(v) for v in vals))
            (out / "density.csv").write_text("\n".join(lines) + "\n")
            write_report_json(out / "report.json", payload)
        return payload

    # single_run
    traj, per_sample = run_single(cfg)
    payload = {"study": cfg.study, "fingerprint": fp, "samples": per_sample}
    if out is not None:
        export_trajectory_csv(traj, out / "trajectory.csv")
        if cfg.emit_grid:
            export_trajectory_csv(traj, out / "trajectory_grid.csv", grid_values=True)
        write_report_json(out / "report.json", payload)
    return payload
