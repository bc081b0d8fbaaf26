"""Pointwise coefficients of the equation and their grid-based application.

The drift is the derivative of a quartic potential, applied as a Nemytskii
(composition) operator; the diffusion multiplies the noise pointwise.  Both act
on grid values and are projected back to the resolved modes by quadrature.  A
smooth cutoff supports the truncated-drift variant with globally Lipschitz
coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericOverflowError
from .spectral import DirichletBasis, SpectralField, coeffs_from_grid, grid_from_coeffs, node_mode_matrix

DEFAULT_OVERFLOW_THRESHOLD = 1e8

_DIFFUSION_FAMILIES = ("constant", "sublinear_power", "bounded_smooth")


@dataclass(frozen=True)
class Potential:
    """Quartic potential f(u) = c4 u^4 + c3 u^3 + c2 u^2 + c1 u + c0 with c4 > 0."""

    c4: float
    c3: float = 0.0
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0

    def __post_init__(self):
        if not self.c4 > 0:
            raise ValueError(f"leading coefficient must be positive, got c4={self.c4}")

    @classmethod
    def double_well(cls) -> "Potential":
        """f(u) = (u^2 - 1)^2 / 4, the standard double well."""
        return cls(c4=0.25, c3=0.0, c2=-0.5, c1=0.0, c0=0.25)


def f_value(p: Potential, xi):
    xi = np.asarray(xi, dtype=float)
    return (((p.c4 * xi + p.c3) * xi + p.c2) * xi + p.c1) * xi + p.c0


def f_prime(p: Potential, xi):
    """Exact first derivative of the potential (the drift density)."""
    xi = np.asarray(xi, dtype=float)
    return ((4.0 * p.c4 * xi + 3.0 * p.c3) * xi + 2.0 * p.c2) * xi + p.c1


def f_second(p: Potential, xi):
    """Exact second derivative of the potential (the drift linearization)."""
    xi = np.asarray(xi, dtype=float)
    return (12.0 * p.c4 * xi + 6.0 * p.c3) * xi + 2.0 * p.c2


@dataclass(frozen=True)
class DiffusionSpec:
    """One of three diffusion families, all globally Lipschitz with growth order < 1.

    constant:        sigma(u) = a
    sublinear_power: sigma(u) = a + b (1 + u^2)^(alpha/2), 0 <= alpha < 1
    bounded_smooth:  sigma(u) = a + b / (1 + u^2)

    With a > 0 every family is bounded below by a, which is the non-degeneracy
    floor the Malliavin probes require.
    """

    family: str
    a: float = 0.0
    b: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.family not in _DIFFUSION_FAMILIES:
            raise ValueError(f"unknown diffusion family {self.family!r}; choose from {_DIFFUSION_FAMILIES}")
        if self.a < 0 or self.b < 0:
            raise ValueError(f"offset and scale must be nonnegative, got a={self.a}, b={self.b}")
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError(f"growth order must lie in [0, 1), got alpha={self.alpha}")
        # Construction-time sanity: the numerically observed Lipschitz constant
        # over a wide sample grid must be finite and consistent with sup|sigma'|.
        grid = np.linspace(-100.0, 100.0, 2001)
        vals = sigma(self, grid)
        slopes = np.abs(np.diff(vals) / np.diff(grid))
        if not np.all(np.isfinite(slopes)):
            raise ValueError("diffusion family produced a non-finite difference quotient")

    @property
    def lower_bound(self) -> float:
        """inf over R of sigma (a for constant/bounded_smooth, a + b for sublinear_power)."""
        if self.family == "sublinear_power":
            return self.a + self.b
        return self.a


def sigma(d: DiffusionSpec, xi):
    xi = np.asarray(xi, dtype=float)
    if d.family == "constant":
        return np.full_like(xi, d.a)
    if d.family == "sublinear_power":
        return d.a + d.b * (1.0 + xi**2) ** (0.5 * d.alpha)
    return d.a + d.b / (1.0 + xi**2)


def sigma_prime(d: DiffusionSpec, xi):
    """Exact derivative of the diffusion coefficient."""
    xi = np.asarray(xi, dtype=float)
    if d.family == "constant":
        return np.zeros_like(xi)
    if d.family == "sublinear_power":
        return d.b * d.alpha * xi * (1.0 + xi**2) ** (0.5 * d.alpha - 1.0)
    return -2.0 * d.b * xi / (1.0 + xi**2) ** 2


@dataclass(frozen=True)
class CutoffSpec:
    """Radius of the smooth drift cutoff: identically 1 on [-R, R], 0 beyond R+1."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"cutoff radius must be positive, got {self.radius}")


def _bump(u):
    # exp(-1/u) for u > 0, else 0; smooth at 0 from the right.
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(u > 0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)


def cutoff(c: CutoffSpec, xi):
    """C-infinity plateau function: 1 on [-R, R], monotone to 0 on (R, R+1)."""
    xi = np.asarray(xi, dtype=float)
    u = c.radius + 1.0 - np.abs(xi)  # transition variable in (0, 1)
    g = _bump(u)
    g1 = _bump(1.0 - u)
    with np.errstate(invalid="ignore"):
        s = np.where(g + g1 > 0, g / np.maximum(g + g1, 1e-300), 0.0)
    return np.where(np.abs(xi) <= c.radius, 1.0, np.where(np.abs(xi) >= c.radius + 1.0, 0.0, s))


def cutoff_prime(c: CutoffSpec, xi):
    xi = np.asarray(xi, dtype=float)
    u = c.radius + 1.0 - np.abs(xi)
    g = _bump(u)
    g1 = _bump(1.0 - u)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        dg = np.where(u > 0, g / np.maximum(u, 1e-300) ** 2, 0.0)
        dg1 = np.where(1.0 - u > 0, g1 / np.maximum(1.0 - u, 1e-300) ** 2, 0.0)
        ds = np.where(g + g1 > 0, (dg * g1 + g * dg1) / np.maximum(g + g1, 1e-300) ** 2, 0.0)
    inside = (np.abs(xi) > c.radius) & (np.abs(xi) < c.radius + 1.0)
    return np.where(inside, -np.sign(xi) * ds, 0.0)


def truncated_drift(p: Potential, c: CutoffSpec, xi):
    """theta_R(u) * f'(u): globally bounded and Lipschitz drift density."""
    return cutoff(c, xi) * f_prime(p, xi)


def truncated_drift_prime(p: Potential, c: CutoffSpec, xi):
    """(theta_R f')' = theta_R' f' + theta_R f''."""
    return cutoff_prime(c, xi) * f_prime(p, xi) + cutoff(c, xi) * f_second(p, xi)


# ---------------------------------------------------------------------------
# Grid application + projection
# ---------------------------------------------------------------------------

def guard_grid(values: np.ndarray, threshold: float = DEFAULT_OVERFLOW_THRESHOLD) -> np.ndarray:
    """Abort on diverging grid values instead of propagating infinities."""
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if not peak <= threshold:  # catches NaN as well
        if not np.all(np.isfinite(values)):
            raise NumericOverflowError("non-finite grid values encountered")
        raise NumericOverflowError(f"grid values reached {peak:.3e}, beyond threshold {threshold:.3e}")
    return values


def apply_drift(
    f: SpectralField,
    p: Potential,
    basis: DirichletBasis | None = None,
    cutoff_spec: CutoffSpec | None = None,
    overflow_threshold: float = DEFAULT_OVERFLOW_THRESHOLD,
) -> SpectralField:
    """Project the pointwise drift f'(X) (optionally cut off) onto the resolved modes."""
    basis = basis or f.basis
    if basis.key != f.basis.key:
        raise ValueError("field and basis disagree")
    grid = guard_grid(grid_from_coeffs(f.coeffs, basis), overflow_threshold)
    if cutoff_spec is None:
        drift = f_prime(p, grid)
    else:
        drift = truncated_drift(p, cutoff_spec, grid)
    return SpectralField(coeffs_from_grid(drift, basis), basis)


def apply_diffusion_row(
    f: SpectralField,
    d: DiffusionSpec,
    j: int,
    basis: DirichletBasis | None = None,
    overflow_threshold: float = DEFAULT_OVERFLOW_THRESHOLD,
) -> SpectralField:
    """Project sigma(X) * e_j onto the resolved modes; j may exceed the mode count."""
    basis = basis or f.basis
    if basis.key != f.basis.key:
        raise ValueError("field and basis disagree")
    if not 1 <= j <= basis.grid_size:
        raise ValueError(f"noise mode {j} is not resolvable on a grid of {basis.grid_size} nodes")
    grid = guard_grid(grid_from_coeffs(f.coeffs, basis), overflow_threshold)
    e_row = node_mode_matrix(basis, basis.grid_size)[j - 1]
    return SpectralField(coeffs_from_grid(sigma(d, grid) * e_row, basis), basis)
