"""JSON configuration: strict parsing, canonical serialization, fingerprints.

The config document mirrors the study-configuration dataclass in snake_case.
Unknown fields are rejected with the offending name so that typos cannot
silently fall back to defaults.  The fingerprint hashes the fully resolved
configuration (defaults materialized, output directory excluded) and is stamped
into every report.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .coefficients import CutoffSpec, DiffusionSpec, Potential
from .errors import ConfigError
from .integrator import SchemeConfig
from .model import InitialCondition, ModelSpec
from .noise import ShiftSpec

_MISSING = object()


def _check_unknown(data: dict, allowed, section: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown field {key!r} in {section}")


def _get(data: dict, key: str, section: str, convert, default=_MISSING):
    if key not in data or data[key] is None:
        if default is _MISSING:
            raise ConfigError(f"missing required field {key!r} in {section}")
        return default
    try:
        return convert(data[key])
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r} in {section}: {exc}") from exc


def _tuple_of(convert):
    def conv(value):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"expected a list, got {type(value).__name__}")
        return tuple(convert(v) for v in value)

    return conv


def _bool(value):
    if not isinstance(value, bool):
        raise ValueError(f"expected true/false, got {value!r}")
    return value


def _parse_potential(value):
    if value is None:
        return None
    if value == "double_well":
        return Potential.double_well()
    if not isinstance(value, dict):
        raise ConfigError("model.potential must be null, 'double_well', or an object with c0..c4")
    allowed = {"c0", "c1", "c2", "c3", "c4"}
    _check_unknown(value, allowed, "model.potential")
    kwargs = {k: _get(value, k, "model.potential", float, 0.0) for k in allowed}
    if "c4" not in value:
        raise ConfigError("missing required field 'c4' in model.potential")
    try:
        return Potential(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"model.potential: {exc}") from exc


def _parse_diffusion(value):
    if not isinstance(value, dict):
        raise ConfigError("model.diffusion must be an object")
    allowed = {"family", "a", "b", "alpha"}
    _check_unknown(value, allowed, "model.diffusion")
    try:
        return DiffusionSpec(
            family=_get(value, "family", "model.diffusion", str),
            a=_get(value, "a", "model.diffusion", float, 0.0),
            b=_get(value, "b", "model.diffusion", float, 0.0),
            alpha=_get(value, "alpha", "model.diffusion", float, 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"model.diffusion: {exc}") from exc


def _parse_initial(value):
    if value is None:
        return InitialCondition()
    if not isinstance(value, dict):
        raise ConfigError("model.initial must be an object")
    allowed = {"kind", "amplitude", "gamma", "coeffs"}
    _check_unknown(value, allowed, "model.initial")
    try:
        return InitialCondition(
            kind=_get(value, "kind", "model.initial", str, "smooth"),
            amplitude=_get(value, "amplitude", "model.initial", float, 0.5),
            gamma=_get(value, "gamma", "model.initial", float, 1.0),
            coeffs=_get(value, "coeffs", "model.initial", _tuple_of(float), ()),
        )
    except ValueError as exc:
        raise ConfigError(f"model.initial: {exc}") from exc


def _parse_model(value):
    if not isinstance(value, dict):
        raise ConfigError("'model' must be an object")
    allowed = {"length", "horizon", "potential", "diffusion", "cutoff_radius", "initial"}
    _check_unknown(value, allowed, "model")
    cutoff_radius = _get(value, "cutoff_radius", "model", float, None)
    try:
        return ModelSpec(
            length=_get(value, "length", "model", float, 1.0),
            horizon=_get(value, "horizon", "model", float, 0.5),
            potential=_parse_potential(value.get("potential", "double_well")),
            diffusion=_parse_diffusion(value.get("diffusion", {"family": "constant", "a": 1.0})),
            cutoff=None if cutoff_radius is None else CutoffSpec(cutoff_radius),
            initial=_parse_initial(value.get("initial")),
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _parse_scheme(value, horizon: float):
    if not isinstance(value, dict):
        raise ConfigError("'scheme' must be an object")
    allowed = {
        "n_modes", "n_steps", "noise_modes", "grid_size", "newton_rel_tol",
        "newton_max_iter", "divergence_threshold", "store_full", "snapshot_stride",
    }
    _check_unknown(value, allowed, "scheme")
    try:
        return SchemeConfig(
            n_modes=_get(value, "n_modes", "scheme", int),
            n_steps=_get(value, "n_steps", "scheme", int),
            horizon=horizon,
            noise_modes=_get(value, "noise_modes", "scheme", int, None),
            grid_size=_get(value, "grid_size", "scheme", int, None),
            newton_rel_tol=_get(value, "newton_rel_tol", "scheme", float, 1e-12),
            newton_max_iter=_get(value, "newton_max_iter", "scheme", int, 50),
            divergence_threshold=_get(value, "divergence_threshold", "scheme", float, 1e8),
            store_full=_get(value, "store_full", "scheme", _bool, False),
            snapshot_stride=_get(value, "snapshot_stride", "scheme", int, None),
        )
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from exc


def _parse_shift(value):
    if value is None:
        return None
    if not isinstance(value, dict):
        raise ConfigError("'shift' must be an object")
    allowed = {"shifts", "points", "anchor_time", "window", "width_exponent"}
    _check_unknown(value, allowed, "shift")
    try:
        return ShiftSpec(
            shifts=_get(value, "shifts", "shift", _tuple_of(float)),
            points=_get(value, "points", "shift", _tuple_of(float)),
            anchor_time=_get(value, "anchor_time", "shift", float),
            window=_get(value, "window", "shift", float),
            width_exponent=_get(value, "width_exponent", "shift", float, 0.5),
        )
    except ValueError as exc:
        raise ConfigError(f"shift: {exc}") from exc


def parse_config(data: dict, default_study: str | None = None):
    """Build a study configuration from a JSON-shaped dict; reject unknown fields."""
    from .studies import StudyConfig  # deferred: studies imports this module

    if not isinstance(data, dict):
        raise ConfigError("the configuration document must be a JSON object")
    allowed = {
        "study", "model", "scheme", "samples", "seed", "out_dir", "error_norm",
        "step_levels", "ref_steps", "mode_levels", "ref_modes", "lags", "anchor_stride",
        "points", "epsilons", "shift", "grid_points", "tau_relative",
        "region_quantiles", "emit_grid",
    }
    _check_unknown(data, allowed, "top level")
    study = _get(data, "study", "top level", str, default_study)
    if study is None:
        raise ConfigError("missing required field 'study' in top level")
    if default_study is not None and study != default_study:
        raise ConfigError(
            f"field 'study' ({study!r}) contradicts the requested study {default_study!r}"
        )
    model = _parse_model(data.get("model", {}))
    scheme = _parse_scheme(data.get("scheme", {}), model.horizon)
    region = _get(data, "region_quantiles", "top level", _tuple_of(float), (0.05, 0.95))
    if len(region) != 2:
        raise ConfigError("region_quantiles must hold exactly two quantiles")
    return StudyConfig(
        study=study,
        model=model,
        scheme=scheme,
        samples=_get(data, "samples", "top level", int, 1),
        seed=_get(data, "seed", "top level", int, 0),
        out_dir=_get(data, "out_dir", "top level", str, None),
        error_norm=_get(data, "error_norm", "top level", float, 0.0),
        step_levels=_get(data, "step_levels", "top level", _tuple_of(int), ()),
        ref_steps=_get(data, "ref_steps", "top level", int, None),
        mode_levels=_get(data, "mode_levels", "top level", _tuple_of(int), ()),
        ref_modes=_get(data, "ref_modes", "top level", int, None),
        lags=_get(data, "lags", "top level", _tuple_of(int), ()),
        anchor_stride=_get(data, "anchor_stride", "top level", int, None),
        points=_get(data, "points", "top level", _tuple_of(float), ()),
        epsilons=_get(data, "epsilons", "top level", _tuple_of(float), None),
        shift=_parse_shift(data.get("shift")),
        grid_points=_get(data, "grid_points", "top level", int, None),
        tau_relative=_get(data, "tau_relative", "top level", float, 1e-6),
        region_quantiles=(float(region[0]), float(region[1])),
        emit_grid=_get(data, "emit_grid", "top level", _bool, False),
    )


def load_config_file(path, default_study: str | None = None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(data, default_study)


# ---------------------------------------------------------------------------
# Canonical serialization and fingerprint
# ---------------------------------------------------------------------------

def config_to_dict(cfg) -> dict:
    """Resolved configuration as plain data (defaults materialized, out_dir excluded)."""
    model = cfg.model
    scheme = cfg.scheme
    pot = model.potential
    return {
        "study": cfg.study,
        "samples": cfg.samples,
        "seed": cfg.seed,
        "error_norm": cfg.error_norm,
        "step_levels": list(cfg.step_levels),
        "ref_steps": cfg.ref_steps,
        "mode_levels": list(cfg.mode_levels),
        "ref_modes": cfg.ref_modes,
        "lags": list(cfg.lags),
        "anchor_stride": cfg.anchor_stride,
        "points": list(cfg.points),
        "epsilons": None if cfg.epsilons is None else list(cfg.epsilons),
        "grid_points": cfg.grid_points,
        "tau_relative": cfg.tau_relative,
        "region_quantiles": list(cfg.region_quantiles),
        "emit_grid": cfg.emit_grid,
        "model": {
            "length": model.length,
            "horizon": model.horizon,
            "potential": None if pot is None else {
                "c4": pot.c4, "c3": pot.c3, "c2": pot.c2, "c1": pot.c1, "c0": pot.c0,
            },
            "diffusion": {
                "family": model.diffusion.family,
                "a": model.diffusion.a,
                "b": model.diffusion.b,
                "alpha": model.diffusion.alpha,
            },
            "cutoff_radius": None if model.cutoff is None else model.cutoff.radius,
            "initial": {
                "kind": model.initial.kind,
                "amplitude": model.initial.amplitude,
                "gamma": model.initial.gamma,
                "coeffs": list(model.initial.coeffs),
            },
        },
        "scheme": {
            "n_modes": scheme.n_modes,
            "n_steps": scheme.n_steps,
            "noise_modes": scheme.resolved_noise_modes,
            "grid_size": scheme.resolved_grid_size,
            "newton_rel_tol": scheme.newton_rel_tol,
            "newton_max_iter": scheme.newton_max_iter,
            "divergence_threshold": scheme.divergence_threshold,
            "store_full": scheme.store_full,
            "snapshot_stride": scheme.snapshot_stride,
        },
        "shift": None if cfg.shift is None else {
            "shifts": list(cfg.shift.shifts),
            "points": list(cfg.shift.points),
            "anchor_time": cfg.shift.anchor_time,
            "window": cfg.shift.window,
            "width_exponent": cfg.shift.width_exponent,
        },
    }


def fingerprint_config(cfg) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
