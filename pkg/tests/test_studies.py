import json
import subprocess
import sys
import time

import numpy as np
import pytest

from schsim import (
    ConfigError,
    DiffusionSpec,
    InitialCondition,
    ModelSpec,
    Potential,
    SchemeConfig,
    initial_state,
    make_basis,
    run_scheme,
    run_study,
    sample,
)
from schsim.config import fingerprint_config, load_config_file, parse_config
from schsim.integrator import difference_norm
from schsim.noise import coarsen
from schsim.studies import StudyConfig, fit_loglog, run_regularity, run_spatial_rate, run_temporal_rate


def minimal_config_dict(**overrides):
    data = {
        "study": "single_run",
        "seed": 7,
        "samples": 2,
        "model": {
            "length": 1.0,
            "horizon": 0.5,
            "potential": "double_well",
            "diffusion": {"family": "sublinear_power", "a": 0.5, "b": 0.25, "alpha": 0.5},
            "initial": {"kind": "smooth", "amplitude": 0.5},
        },
        "scheme": {"n_modes": 16, "n_steps": 64},
    }
    data.update(overrides)
    return data


class TestConfigParsing:
    def test_round_trip(self):
        cfg = parse_config(minimal_config_dict())
        assert cfg.study == "single_run"
        assert cfg.scheme.n_modes == 16
        assert cfg.scheme.horizon == 0.5  # injected from the model
        assert cfg.model.potential.c4 == 0.25

    def test_unknown_top_level_field_named(self):
        with pytest.raises(ConfigError, match="'samplez'"):
            parse_config(minimal_config_dict(samplez=3))

    def test_unknown_nested_field_named(self):
        data = minimal_config_dict()
        data["scheme"]["n_stepz"] = 64
        with pytest.raises(ConfigError, match="'n_stepz' in scheme"):
            parse_config(data)

    def test_bad_value_names_field(self):
        data = minimal_config_dict()
        data["model"]["diffusion"]["family"] = "exotic"
        with pytest.raises(ConfigError, match="diffusion"):
            parse_config(data)

    def test_study_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="contradicts"):
            parse_config(minimal_config_dict(), default_study="temporal_rate")

    def test_missing_study_filled_from_cli(self):
        data = minimal_config_dict()
        del data["study"]
        cfg = parse_config(data, default_study="single_run")
        assert cfg.study == "single_run"

    def test_invalid_json_file(self, tmp_path):
        f = tmp_path / "bad.json"
        f.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config_file(f)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config_file(tmp_path / "absent.json")

    def test_fingerprint_stable_and_seed_sensitive(self):
        a = parse_config(minimal_config_dict())
        b = parse_config(minimal_config_dict())
        c = parse_config(minimal_config_dict(seed=8))
        assert fingerprint_config(a) == fingerprint_config(b)
        assert fingerprint_config(a) != fingerprint_config(c)

    def test_out_dir_not_in_fingerprint(self):
        a = parse_config(minimal_config_dict())
        b = parse_config(minimal_config_dict(out_dir="/tmp/elsewhere"))
        assert fingerprint_config(a) == fingerprint_config(b)


class TestFitLogLog:
    def test_refuses_noisy_levels(self):
        slope, lo, hi, reason = fit_loglog([1, 2, 4], [1.0, 2.0, 4.0], [0.0, 0.0, 2.0])
        assert slope is None and "standard error" in reason

    def test_deterministic_ols(self):
        xs = [1.0, 2.0, 4.0, 8.0]
        errs = [0.1 * x**1.5 for x in xs]
        slope, lo, hi, reason = fit_loglog(xs, errs, [0.0] * 4)
        assert reason is None
        assert slope == pytest.approx(1.5, abs=1e-12)
        assert lo <= slope <= hi

    def test_needs_three_levels(self):
        slope, *_, reason = fit_loglog([1, 2], [1.0, 2.0], [0.0, 0.0])
        assert slope is None and "3 levels" in reason


class TestTemporalRate:
    def test_linear_model_deterministic_order_one(self):
        # length pi keeps the slow mode active over the horizon, so the error
        # sits in the first-order regime rather than the fully relaxed one
        import math

        model = ModelSpec(length=math.pi, horizon=0.5, potential=None,
                          diffusion=DiffusionSpec("constant", a=0.0),
                          initial=InitialCondition("smooth", amplitude=0.5))
        cfg = StudyConfig(
            study="temporal_rate", model=model,
            scheme=SchemeConfig(n_modes=16, n_steps=16, horizon=0.5),
            samples=1, seed=0,
            step_levels=(16, 32, 64, 128, 256), ref_steps=2048,
        )
        rep = run_temporal_rate(cfg)
        assert rep.slope == pytest.approx(1.0, abs=0.05)
        errs = [lev.error for lev in rep.levels]  # sorted by ascending dt
        assert errs[0] < errs[-1]  # finest level beats coarsest

    def test_validation(self, linear_model):
        base = dict(study="temporal_rate", model=linear_model,
                    scheme=SchemeConfig(n_modes=8, n_steps=16, horizon=0.5), samples=1, seed=0)
        with pytest.raises(ConfigError, match="step_levels"):
            run_temporal_rate(StudyConfig(**base, step_levels=(8, 16), ref_steps=256))
        with pytest.raises(ConfigError, match="8x finer"):
            run_temporal_rate(StudyConfig(**base, step_levels=(8, 16, 32), ref_steps=64))
        with pytest.raises(ConfigError, match="powers of two"):
            run_temporal_rate(StudyConfig(**base, step_levels=(8, 12, 32), ref_steps=256))

    def test_negative_sobolev_error_norm_option(self):
        # same linear study measured in the H^-1 norm: order unchanged, levels differ
        import math

        model = ModelSpec(length=math.pi, horizon=0.5, potential=None,
                          diffusion=DiffusionSpec("constant", a=0.0),
                          initial=InitialCondition("smooth", amplitude=0.5))
        base = dict(study="temporal_rate", model=model,
                    scheme=SchemeConfig(n_modes=16, n_steps=16, horizon=0.5),
                    samples=1, seed=0, step_levels=(16, 32, 64), ref_steps=512)
        plain = run_temporal_rate(StudyConfig(**base))
        weighted = run_temporal_rate(StudyConfig(**base, error_norm=-1.0))
        assert weighted.slope == pytest.approx(1.0, abs=0.1)
        assert weighted.levels[0].error != plain.levels[0].error


class TestRegularityDeterministic:
    def test_smooth_drift_flow_slope_near_one_on_small_lags(self):
        # sigma = 0: increments of the smooth-in-time flow grow linearly in the
        # lag as long as the lag stays below the slowest relaxation time
        import math

        model = ModelSpec(length=math.pi, horizon=0.5, potential=Potential.double_well(),
                          diffusion=DiffusionSpec("constant", a=0.0),
                          initial=InitialCondition("smooth", amplitude=0.5))
        cfg = StudyConfig(
            study="regularity", model=model,
            scheme=SchemeConfig(n_modes=16, n_steps=8192, horizon=0.5),
            samples=1, seed=0, lags=tuple(2**i for i in range(0, 8)),
        )
        rep = run_regularity(cfg)
        assert rep.slope >= 0.9


class TestSpatialRate:
    def test_single_mode_initial_state_is_exact(self):
        model = ModelSpec(length=1.0, horizon=0.5, potential=None,
                          diffusion=DiffusionSpec("constant", a=0.0),
                          initial=InitialCondition("modes", coeffs=(1.0,)))
        cfg = StudyConfig(
            study="spatial_rate", model=model,
            scheme=SchemeConfig(n_modes=2, n_steps=64, horizon=0.5),
            samples=1, seed=0, mode_levels=(2, 4, 8), ref_modes=16,
        )
        rep = run_spatial_rate(cfg)
        assert all(lev.error == 0.0 for lev in rep.levels)
        assert rep.slope is None  # nothing to regress on exact zeros

    def test_noise_mode_doubling_within_one_stderr(self, full_model):
        # robustness of the default noise truncation: per-level errors move by
        # less than one MC standard error when the level consumes twice the modes
        ref_cfg = SchemeConfig(n_modes=32, n_steps=256, horizon=0.5, noise_modes=128)
        basis_ref = make_basis(full_model, ref_cfg)
        x0_ref = initial_state(full_model, basis_ref)
        n_level = 8
        errs = {16: [], 32: []}
        for seed in range(10):
            fine = sample(seed, 128, 256, ref_cfg.dt)
            ref = run_scheme(x0_ref, fine, full_model, ref_cfg)
            for m_noise in errs:
                cfg = SchemeConfig(n_modes=n_level, n_steps=256, horizon=0.5, noise_modes=m_noise)
                basis = make_basis(full_model, cfg)
                traj = run_scheme(initial_state(full_model, basis),
                                  coarsen(fine, 1, m_noise), full_model, cfg)
                errs[m_noise].append(
                    difference_norm(traj.final_coeffs, ref.final_coeffs, basis_ref) ** 2
                )
        rms16 = np.sqrt(np.mean(errs[16]))
        rms32 = np.sqrt(np.mean(errs[32]))
        se = np.std(errs[16], ddof=1) / np.sqrt(10) / (2 * rms16)
        assert abs(rms16 - rms32) < se


class TestRunStudyOutputs:
    def test_single_run_smoke_emits_files_quickly(self, tmp_path):
        cfg = parse_config(minimal_config_dict(samples=4, out_dir=str(tmp_path / "out")))
        t0 = time.monotonic()
        payload = run_study(cfg)
        assert time.monotonic() - t0 < 10.0
        assert (tmp_path / "out" / "trajectory.csv").is_file()
        assert (tmp_path / "out" / "report.json").is_file()
        assert len(payload["samples"]) == 4
        assert all(s["split_gap"] >= 0.0 for s in payload["samples"])

    def test_rerun_is_byte_identical(self, tmp_path):
        results = []
        for name in ("a", "b"):
            cfg = parse_config(minimal_config_dict(samples=2, out_dir=str(tmp_path / name)))
            run_study(cfg)
            results.append((tmp_path / name / "trajectory.csv").read_bytes())
        assert results[0] == results[1]

    def test_regularity_outputs_and_rerun(self, tmp_path, additive_model):
        def make(out):
            return StudyConfig(
                study="regularity", model=additive_model,
                scheme=SchemeConfig(n_modes=8, n_steps=256, horizon=0.5),
                samples=3, seed=5, lags=(1, 4, 16, 64, 128), out_dir=str(out),
            )

        p1 = run_study(make(tmp_path / "r1"))
        run_study(make(tmp_path / "r2"))
        assert (tmp_path / "r1" / "errors.csv").read_bytes() == (tmp_path / "r2" / "errors.csv").read_bytes()
        report = json.loads((tmp_path / "r1" / "report.json").read_text())
        assert report["fingerprint"] == p1["fingerprint"]
        lines = (tmp_path / "r1" / "errors.csv").read_text().strip().split("\n")
        assert lines[0] == "level,value,error,stderr,samples"
        assert len(lines) == 6

    def test_probe_study_files(self, tmp_path, full_model):
        cfg = StudyConfig(
            study="malliavin_probe", model=full_model,
            scheme=SchemeConfig(n_modes=8, n_steps=32, horizon=0.5),
            samples=4, seed=11, points=(0.3, 0.7), out_dir=str(tmp_path / "probe"),
        )
        payload = run_study(cfg)
        assert payload["positive_fraction"] == 1.0
        lines = (tmp_path / "probe" / "probe.csv").read_text().strip().split("\n")
        assert lines[0] == "epsilon,empirical_fraction,sample_count"

    def test_density_study_files(self, tmp_path, additive_model):
        cfg = StudyConfig(
            study="density_study", model=additive_model,
            scheme=SchemeConfig(n_modes=8, n_steps=32, horizon=0.5),
            samples=64, seed=13, points=(0.5,), out_dir=str(tmp_path / "dens"),
        )
        payload = run_study(cfg)
        assert (tmp_path / "dens" / "samples.csv").is_file()
        assert (tmp_path / "dens" / "density.csv").is_file()
        assert 0.9 <= payload["mass"] <= 1.01
        assert payload["positivity"]["fraction_above"] > 0.99

    def test_threaded_matches_serial(self, additive_model):
        cfg = StudyConfig(
            study="regularity", model=additive_model,
            scheme=SchemeConfig(n_modes=8, n_steps=256, horizon=0.5),
            samples=4, seed=5, lags=(1, 4, 16, 64, 128),
        )
        serial = run_study(cfg, threads=1)
        threaded = run_study(cfg, threads=2)
        assert serial == threaded


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "schsim.cli", *args],
            capture_output=True, text=True, timeout=300,
        )

    def test_success_exit_zero(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps(minimal_config_dict(samples=2)))
        out = tmp_path / "out"
        r = self.run_cli("single_run", "--config", str(cfg_file), "--out", str(out))
        assert r.returncode == 0, r.stderr
        assert (out / "report.json").is_file()
        assert "fingerprint" in r.stdout

    def test_config_error_exit_two(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps(minimal_config_dict(bogus_field=1)))
        r = self.run_cli("single_run", "--config", str(cfg_file))
        assert r.returncode == 2
        assert "bogus_field" in r.stderr

    def test_study_mismatch_exit_two(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps(minimal_config_dict()))
        r = self.run_cli("temporal_rate", "--config", str(cfg_file))
        assert r.returncode == 2

    def test_divergence_exit_three(self, tmp_path):
        data = minimal_config_dict(samples=1)
        data["model"]["horizon"] = 10.0
        data["model"]["initial"] = {"kind": "modes", "coeffs": [2000.0]}
        data["scheme"] = {"n_modes": 8, "n_steps": 2, "newton_max_iter": 12}
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps(data))
        r = self.run_cli("single_run", "--config", str(cfg_file))
        assert r.returncode == 3

    def test_seed_override_changes_fingerprint(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps(minimal_config_dict(samples=2)))
        a = self.run_cli("single_run", "--config", str(cfg_file))
        b = self.run_cli("single_run", "--config", str(cfg_file), "--seed", "99")
        fp_a = json.loads(a.stdout)["fingerprint"]
        fp_b = json.loads(b.stdout)["fingerprint"]
        assert fp_a != fp_b
