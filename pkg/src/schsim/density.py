"""Monte Carlo sampling of point evaluations and kernel density estimation.

Samples are final-state values of independent trajectories at fixed interior
points, read off the sine series exactly.  The density estimator is a product
Gaussian kernel with per-dimension Silverman bandwidth; positivity reports
compare the estimate against a threshold because a Gaussian-kernel estimate is
never literally zero, so the useful question is where mass deserts are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDirectionError, NewtonDivergedError, NumericOverflowError, SchsimError
from .integrator import SchemeConfig, initial_state, make_basis, run_scheme
from .malliavin import _validate_points
from .model import ModelSpec
from .noise import ShiftSpec, sample, shift
from .spectral import eval_at_points

_MIN_SAMPLES = {1: 30, 2: 200, 3: 1000}


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Rows of final-state evaluations at the configured points."""

    points: tuple[float, ...]
    samples: np.ndarray  # (n_samples, d)
    base_seed: int
    model_tag: str
    scheme_tag: str

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]


def collect_samples(
    model: ModelSpec,
    config: SchemeConfig,
    points,
    n_samples: int,
    base_seed: int,
    shift_spec: ShiftSpec | None = None,
) -> SampleSet:
    """Run independent trajectories (seed xor index) and evaluate the final state.

    With a shift specification, every path is displaced by the deterministic
    bump drift before integration, which realizes sampling under shifted noise.
    """
    pts = tuple(float(x) for x in np.atleast_1d(points))
    _validate_points(pts, model.length)
    if n_samples < 2:
        raise ValueError(f"need at least two samples, got {n_samples}")
    basis = make_basis(model, config)
    x0 = initial_state(model, basis)
    rows = np.empty((n_samples, len(pts)))
    for i in range(n_samples):
        seed = (int(base_seed) ^ i) % 2**64
        path = sample(seed, config.resolved_noise_modes, config.n_steps, config.dt)
        if shift_spec is not None:
            path = shift(path, shift_spec, basis)
        try:
            traj = run_scheme(x0, path, model, config)
        except (NewtonDivergedError, NumericOverflowError) as exc:
            raise type(exc)(f"sample {i} (seed {seed}): {exc}") from exc
        rows[i] = eval_at_points(traj.final_coeffs, pts, model.length)
    if not np.all(np.isfinite(rows)):
        raise SchsimError("sample matrix contains non-finite values")
    return SampleSet(pts, rows, int(base_seed), repr(model), repr(config))


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Density values on a tensor grid plus the bandwidth that produced them."""

    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    bandwidth: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for ax in self.axes:
            vol *= ax[1] - ax[0]
        return vol

    def mass(self) -> float:
        """Riemann sum of the estimate over its grid."""
        return float(np.sum(self.values) * self.cell_volume)


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    """1.06 * std_i * M^(-1/(d+4)) per coordinate."""
    m, d = samples.shape
    sd = samples.std(axis=0, ddof=1)
    return 1.06 * sd * m ** (-1.0 / (d + 4))


def kde(
    samples: SampleSet | np.ndarray,
    grid_points: int | None = None,
    box: tuple[tuple[float, float], ...] | None = None,
    bandwidth=None,
) -> DensityEstimate:
    """Product-Gaussian kernel density estimate on a tensor grid.

    The default box spans the 0.1%..99.9% sample quantiles padded by four
    bandwidths, which keeps the Riemann mass of the estimate near one.
    """
    data = samples.samples if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    m, d = data.shape
    if d not in _MIN_SAMPLES:
        raise ValueError(f"density estimation supports d <= 3, got d={d}")
    if m < _MIN_SAMPLES[d]:
        raise ValueError(f"need at least {_MIN_SAMPLES[d]} samples for d={d}, got {m}")
    sd = data.std(axis=0, ddof=1)
    for i, s in enumerate(sd):
        if s == 0.0:
            raise DegenerateDirectionError(f"coordinate {i} has zero sample variance")
    h = np.asarray(bandwidth, dtype=float) if bandwidth is not None else silverman_bandwidth(data)
    if h.shape != (d,):
        raise ValueError(f"bandwidth must have one entry per dimension, got shape {h.shape}")
    if grid_points is None:
        grid_points = {1: 512, 2: 96, 3: 32}[d]
    if box is None:
        lo = np.quantile(data, 0.001, axis=0) - 4.0 * h
        hi = np.quantile(data, 0.999, axis=0) + 4.0 * h
        box = tuple((float(a), float(b)) for a, b in zip(lo, hi))
    axes = tuple(np.linspace(a, b, grid_points) for a, b in box)
    # Per-dimension kernel matrices contracted over the sample index.
    kernels = []
    for i in range(d):
        u = (axes[i][:, None] - data[None, :, i]) / h[i]
        kernels.append(np.exp(-0.5 * u**2) / (h[i] * np.sqrt(2.0 * np.pi)))
    if d == 1:
        values = kernels[0].mean(axis=1)
    elif d == 2:
        values = np.einsum("im,jm->ij", kernels[0], kernels[1]) / m
    else:
        values = np.einsum("im,jm,km->ijk", kernels[0], kernels[1], kernels[2]) / m
    return DensityEstimate(axes, values, h)


def marginal_density(estimate: DensityEstimate, keep_axis: int) -> DensityEstimate:
    """Integrate out every axis except ``keep_axis`` (Riemann)."""
    if not 0 <= keep_axis < estimate.dimension:
        raise ValueError(f"axis {keep_axis} outside 0..{estimate.dimension - 1}")
    values = estimate.values
    vol = 1.0
    for ax in sorted(set(range(estimate.dimension)) - {keep_axis}, reverse=True):
        values = values.sum(axis=ax)
        vol *= estimate.axes[ax][1] - estimate.axes[ax][0]
    return DensityEstimate(
        (estimate.axes[keep_axis],), values * vol, estimate.bandwidth[[keep_axis]]
    )


@dataclass(frozen=True)
class PositivityReport:
    region: tuple[tuple[float, float], ...]
    threshold: float
    fraction_above: float
    min_density: float
    zero_cells: int
    cells: int


def positivity_report(
    estimate: DensityEstimate,
    region: tuple[tuple[float, float], ...],
    threshold: float,
) -> PositivityReport:
    """Fraction of region grid points at or above the threshold, plus the minimum."""
    if len(region) != estimate.dimension:
        raise ValueError(f"region needs {estimate.dimension} intervals, got {len(region)}")
    masks = []
    for (lo, hi), ax in zip(region, estimate.axes):
        if lo >= hi:
            raise ValueError(f"empty region interval ({lo}, {hi})")
        if lo < ax[0] or hi > ax[-1]:
            raise ValueError(f"region interval ({lo}, {hi}) leaves the estimate grid [{ax[0]}, {ax[-1]}]")
        masks.append((ax >= lo) & (ax <= hi))
    if not all(m.any() for m in masks):
        raise ValueError("region contains no grid points")
    sub = estimate.values
    for axis, mask in enumerate(masks):
        sub = np.compress(mask, sub, axis=axis)
    return PositivityReport(
        region=tuple((float(lo), float(hi)) for lo, hi in region),
        threshold=float(threshold),
        fraction_above=float(np.mean(sub >= threshold)),
        min_density=float(sub.min()),
        zero_cells=int(np.sum(sub == 0.0)),
        cells=int(sub.size),
    )
