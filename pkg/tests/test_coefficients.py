import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schsim.coefficients import (
    CutoffSpec,
    DiffusionSpec,
    Potential,
    apply_diffusion_row,
    apply_drift,
    cutoff,
    cutoff_prime,
    f_prime,
    f_second,
    sigma,
    sigma_prime,
    truncated_drift,
    truncated_drift_prime,
)
from schsim.errors import NumericOverflowError
from schsim.spectral import build_basis, field, node_mode_matrix, to_grid


class TestPotential:
    def test_double_well_derivative_roots(self):
        p = Potential.double_well()
        assert f_prime(p, 0.0) == 0.0
        assert f_prime(p, 1.0) == 0.0
        assert f_prime(p, -1.0) == 0.0

    def test_double_well_values(self):
        p = Potential.double_well()
        assert f_prime(p, 2.0) == pytest.approx(6.0)   # 8 - 2
        assert f_second(p, 0.0) == pytest.approx(-1.0)  # 3 xi^2 - 1 at 0

    def test_rejects_nonpositive_leading_coefficient(self):
        with pytest.raises(ValueError):
            Potential(c4=0.0)

    @given(st.floats(-5, 5))
    @settings(max_examples=50, deadline=None)
    def test_derivatives_by_finite_difference(self, xi):
        p = Potential(c4=0.7, c3=-0.3, c2=0.2, c1=1.1, c0=-2.0)
        h = 1e-6
        fd1 = (f_prime(p, xi + h) - f_prime(p, xi - h)) / (2 * h)
        assert fd1 == pytest.approx(f_second(p, xi), rel=1e-5, abs=1e-5)


class TestDiffusion:
    def test_constant_family(self):
        d = DiffusionSpec("constant", a=1.0)
        assert sigma(d, 3.7) == 1.0
        assert sigma_prime(d, 3.7) == 0.0

    def test_sublinear_power_at_zero(self):
        d = DiffusionSpec("sublinear_power", a=0.5, b=0.25, alpha=0.5)
        assert sigma(d, 0.0) == pytest.approx(0.75)

    def test_sigma_prime_matches_finite_difference(self):
        grid = np.linspace(-10, 10, 100)
        h = 1e-6
        for d in (
            DiffusionSpec("sublinear_power", a=0.5, b=0.25, alpha=0.5),
            DiffusionSpec("bounded_smooth", a=0.3, b=1.0),
        ):
            fd = (sigma(d, grid + h) - sigma(d, grid - h)) / (2 * h)
            exact = sigma_prime(d, grid)
            assert np.abs(fd - exact).max() <= 1e-6 * (1 + np.abs(exact).max())

    def test_lipschitz_constant_matches_sup_slope(self):
        grid = np.linspace(-100, 100, 400001)
        for d in (
            DiffusionSpec("constant", a=2.0),
            DiffusionSpec("sublinear_power", a=0.5, b=0.25, alpha=0.5),
            DiffusionSpec("bounded_smooth", a=0.1, b=2.0),
        ):
            vals = sigma(d, grid)
            lip = np.abs(np.diff(vals) / np.diff(grid)).max()
            sup_slope = np.abs(sigma_prime(d, grid)).max()
            assert np.isfinite(lip)
            if sup_slope > 0:
                assert lip == pytest.approx(sup_slope, rel=0.05)

    def test_sublinear_growth_envelope(self):
        d = DiffusionSpec("sublinear_power", a=0.5, b=0.25, alpha=0.5)
        xi = np.geomspace(1.0, 1e6, 50)
        bound = (d.a + 2 * d.b) * (1.0 + np.abs(xi) ** d.alpha)
        assert np.all(sigma(d, xi) <= bound)

    def test_lower_bound_property(self):
        assert DiffusionSpec("sublinear_power", a=0.5, b=0.25, alpha=0.5).lower_bound == 0.75
        assert DiffusionSpec("bounded_smooth", a=0.3, b=1.0).lower_bound == 0.3

    def test_validation(self):
        with pytest.raises(ValueError):
            DiffusionSpec("exotic")
        with pytest.raises(ValueError):
            DiffusionSpec("constant", a=-1.0)
        with pytest.raises(ValueError):
            DiffusionSpec("sublinear_power", a=1.0, b=1.0, alpha=1.0)


class TestCutoff:
    def test_plateau_and_support(self):
        c = CutoffSpec(2.0)
        assert cutoff(c, 0.0) == 1.0
        assert cutoff(c, 2.0) == 1.0
        assert cutoff(c, -1.5) == 1.0
        assert cutoff(c, 3.0) == 0.0
        assert cutoff(c, -3.5) == 0.0

    def test_transition_monotone_in_magnitude(self):
        # away from the edges, where exp(-1/u) is representable in double precision
        c = CutoffSpec(1.0)
        xs = np.linspace(1.05, 1.95, 2000)
        vals = cutoff(c, xs)
        assert np.all(vals > 0.0)
        assert np.all(vals < 1.0)
        assert np.all(np.diff(vals) <= 0.0)
        assert cutoff(c, 1.5) == pytest.approx(0.5)

    def test_prime_matches_finite_difference(self):
        c = CutoffSpec(1.0)
        xs = np.linspace(-2.5, 2.5, 501)
        h = 1e-7
        fd = (cutoff(c, xs + h) - cutoff(c, xs - h)) / (2 * h)
        assert np.abs(fd - cutoff_prime(c, xs)).max() < 1e-5

    def test_truncated_drift_agrees_inside_radius(self):
        p = Potential.double_well()
        c = CutoffSpec(2.0)
        xs = np.linspace(-2.0, 2.0, 101)
        np.testing.assert_array_equal(truncated_drift(p, c, xs), f_prime(p, xs))
        np.testing.assert_array_equal(truncated_drift_prime(p, c, xs), f_second(p, xs))

    def test_truncated_drift_vanishes_outside(self):
        p = Potential.double_well()
        c = CutoffSpec(2.0)
        assert truncated_drift(p, c, 3.1) == 0.0
        assert truncated_drift(p, c, -4.0) == 0.0

    def test_truncated_drift_bounded_by_plateau_max(self):
        p = Potential.double_well()
        c = CutoffSpec(2.0)
        dense = np.linspace(-c.radius - 2, c.radius + 2, 20001)
        sup = np.abs(truncated_drift(p, c, dense)).max()
        plateau = np.linspace(-c.radius - 1, c.radius + 1, 20001)
        assert sup <= np.abs(f_prime(p, plateau)).max() + 1e-12


class TestMonotonePerturbation:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_one_sided_lipschitz_inner_product(self, seed):
        # <F(u) - F(v), u - v> >= -Lambda |u - v|^2 with Lambda = sup |min(f'', 0)|
        rng = np.random.default_rng(seed)
        p = Potential.double_well()
        u = rng.uniform(-2, 2, size=64)
        v = rng.uniform(-2, 2, size=64)
        lo = min(u.min(), v.min())
        hi = max(u.max(), v.max())
        samples = np.linspace(lo, hi, 1000)
        lam = max(0.0, -float(f_second(p, samples).min()))
        lhs = float(np.sum((f_prime(p, u) - f_prime(p, v)) * (u - v)))
        assert lhs >= -lam * float(np.sum((u - v) ** 2)) - 1e-10


class TestGridApplication:
    def test_zero_field_double_well(self):
        b = build_basis(1.0, 8, 16)
        out = apply_drift(field(np.zeros(8), b), Potential.double_well())
        assert np.all(out.coeffs == 0.0)

    def test_constant_one_field_has_zero_drift(self):
        # grid values identically 1 -> f'(1) = 0 for the double well
        b = build_basis(1.0, 8, 16)
        p = Potential.double_well()
        ones = np.ones(b.grid_size)
        assert np.abs(f_prime(p, ones)).max() == 0.0

    def test_apply_drift_matches_naive_quadrature(self, rng):
        b = build_basis(1.0, 8, 32)
        p = Potential.double_well()
        f = field(0.3 * rng.standard_normal(8), b)
        got = apply_drift(f, p).coeffs
        vals = f_prime(p, to_grid(f).values)
        w = b.quadrature_weight
        oracle = np.array([
            w * float(np.sum(vals * math.sqrt(2.0) * np.sin(j * math.pi * b.nodes)))
            for j in range(1, 9)
        ])
        assert np.abs(got - oracle).max() < 1e-10

    def test_apply_diffusion_row_identity_for_constant_sigma(self):
        b = build_basis(1.0, 8, 16)
        d = DiffusionSpec("constant", a=1.0)
        f = field(np.zeros(8), b)
        for j in (1, 4, 8):
            out = apply_diffusion_row(f, d, j).coeffs
            expected = np.zeros(8)
            expected[j - 1] = 1.0
            assert np.abs(out - expected).max() < 1e-12
        for j in (9, 16):
            assert np.abs(apply_diffusion_row(f, d, j).coeffs).max() < 1e-12

    def test_apply_diffusion_row_zero_field_scaling(self):
        b = build_basis(1.0, 8, 16)
        d = DiffusionSpec("sublinear_power", a=0.5, b=0.25, alpha=0.5)
        out = apply_diffusion_row(field(np.zeros(8), b), d, 3).coeffs
        expected = np.zeros(8)
        expected[2] = 0.75
        assert np.abs(out - expected).max() < 1e-12

    def test_apply_diffusion_row_matches_naive_quadrature(self, rng):
        b = build_basis(1.0, 8, 32)
        d = DiffusionSpec("sublinear_power", a=0.5, b=0.25, alpha=0.5)
        f = field(rng.standard_normal(8), b)
        j = 5
        got = apply_diffusion_row(f, d, j).coeffs
        vals = sigma(d, to_grid(f).values) * node_mode_matrix(b, b.grid_size)[j - 1]
        w = b.quadrature_weight
        oracle = np.array([
            w * float(np.sum(vals * math.sqrt(2.0) * np.sin(i * math.pi * b.nodes)))
            for i in range(1, 9)
        ])
        assert np.abs(got - oracle).max() < 1e-10

    def test_overflow_guard(self):
        b = build_basis(1.0, 4, 8)
        f = field([1e9, 0, 0, 0], b)
        with pytest.raises(NumericOverflowError):
            apply_drift(f, Potential.double_well())

    def test_diffusion_row_mode_must_fit_grid(self):
        b = build_basis(1.0, 4, 8)
        f = field(np.zeros(4), b)
        d = DiffusionSpec("constant", a=1.0)
        with pytest.raises(ValueError):
            apply_diffusion_row(f, d, 0)
        with pytest.raises(ValueError):
            apply_diffusion_row(f, d, 9)  # beyond the 8-node grid
