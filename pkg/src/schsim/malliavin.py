"""Tangent processes of the scheme with respect to single noise increments.

The derivative of the final state with respect to increment (l, j) obeys a
linear recursion driven by the forward trajectory: it is seeded through the
step-(l+1) Jacobian by the projection of sigma(X_l) e_j, and thereafter each
step solves

    J_{k+1} D_{k+1} = D_k + P_N[sigma'(X_k) * D_k * dW_k]

with J_{k+1} the converged Newton Jacobian of the forward step (the exact
derivative of the implicit map).  Stacking all K * M directions and sweeping
forward once gives the Gram matrix of point evaluations, the discrete
counterpart of the Malliavin covariance matrix at the chosen spatial points.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .coefficients import sigma, sigma_prime
from .errors import DegenerateDiffusionError
from .integrator import SchemeConfig, Trajectory, _Stepper, initial_state, make_basis, run_scheme
from .model import ModelSpec
from .noise import NoisePath, sample
from .spectral import SpectralField, coeffs_from_grid, grid_from_coeffs, node_mode_matrix, sine_values


@dataclass(frozen=True)
class TangentDirection:
    """Coordinates of one noise increment: source step l and noise mode j."""

    step: int
    mode: int

    def validate(self, config: SchemeConfig) -> None:
        if not 0 <= self.step < config.n_steps:
            raise ValueError(f"source step {self.step} outside 0..{config.n_steps - 1}")
        if not 1 <= self.mode <= config.resolved_noise_modes:
            raise ValueError(f"noise mode {self.mode} outside 1..{config.resolved_noise_modes}")


@dataclass(frozen=True)
class MalliavinMatrix:
    """Gram matrix C_ij of the tangent family evaluated at d spatial points."""

    entries: np.ndarray
    points: tuple[float, ...]
    cutoff_radius: float | None

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))


def _check_pair(traj: Trajectory, noise: NoisePath) -> None:
    if not traj.is_full:
        raise ValueError("tangent propagation needs a fully stored trajectory (store_full=True)")
    if traj.noise_fingerprint != noise.fingerprint():
        raise ValueError("trajectory and noise path were not produced together")


def _sweep(
    traj: Trajectory,
    noise: NoisePath,
    directions: list[TangentDirection],
    model: ModelSpec,
    config: SchemeConfig,
) -> np.ndarray:
    """Evolve all requested tangents in one forward pass; rows follow the caller's order."""
    _check_pair(traj, noise)
    for d in directions:
        d.validate(config)
    basis = traj.basis
    stepper = _Stepper(model, config, basis)
    n_modes = config.n_modes

    order = sorted(range(len(directions)), key=lambda i: (directions[i].step, directions[i].mode))
    by_step: dict[int, list[int]] = {}
    for rank, idx in enumerate(order):
        by_step.setdefault(directions[idx].step, []).append(rank)

    emat = node_mode_matrix(basis, basis.grid_size)
    active = np.zeros((0, n_modes))
    inc = noise.increments
    for k in range(config.n_steps):
        grid_xk = stepper.grid_of(traj.states[k])
        rows = [active]
        if active.shape[0]:
            noise_grid = grid_from_coeffs(inc[:, k], basis)
            mult = sigma_prime(model.diffusion, grid_xk) * noise_grid
            active_grid = grid_from_coeffs(active, basis)
            rows = [active + coeffs_from_grid(active_grid * mult, basis, n_modes)]
        born = by_step.get(k)
        if born:
            modes = np.array([directions[order[r]].mode for r in born]) - 1
            seeds = coeffs_from_grid(sigma(model.diffusion, grid_xk) * emat[modes], basis, n_modes)
            rows.append(seeds)
        rhs = np.concatenate(rows, axis=0) if len(rows) > 1 else rows[0]
        if rhs.shape[0] == 0:
            continue
        grid_next = stepper.grid_of(traj.states[k + 1])
        active = stepper.solve_linearized(rhs, model.drift_slope_values(grid_next), step=k)

    out = np.empty((len(directions), n_modes))
    for rank, idx in enumerate(order):
        out[idx] = active[rank]
    return out


def propagate_tangent(
    traj: Trajectory,
    noise: NoisePath,
    direction: TangentDirection,
    model: ModelSpec,
    config: SchemeConfig,
) -> SpectralField:
    """Tangent of the final state with respect to one noise increment."""
    rows = _sweep(traj, noise, [direction], model, config)
    return SpectralField(rows[0], traj.basis)


def malliavin_matrix(
    traj: Trajectory,
    noise: NoisePath,
    points,
    model: ModelSpec,
    config: SchemeConfig,
) -> MalliavinMatrix:
    """C_ij = sum over directions of dt * D(x_i) * D(x_j).

    The time integral carries weight dt per step; the space integral is exact
    by mode orthonormality, so the directions are precisely the discrete noise
    coordinates.  Point evaluation uses the sine series, not interpolation.
    """
    pts = tuple(float(x) for x in np.atleast_1d(points))
    _validate_points(pts, traj.basis.length)
    directions = [
        TangentDirection(step=l, mode=j)
        for l in range(config.n_steps)
        for j in range(1, config.resolved_noise_modes + 1)
    ]
    final = _sweep(traj, noise, directions, model, config)
    evals = final @ sine_values(traj.basis.length, config.n_modes, pts).T  # (n_dirs, d)
    d = len(pts)
    entries = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            val = config.dt * float(np.dot(evals[:, i], evals[:, j]))
            entries[i, j] = val
            entries[j, i] = val
    radius = model.cutoff.radius if model.cutoff is not None else None
    return MalliavinMatrix(entries, pts, radius)


def _validate_points(points: tuple[float, ...], length: float) -> None:
    if len(set(points)) != len(points):
        raise ValueError("evaluation points must be pairwise distinct")
    for x in points:
        if not 0.0 < x < length:
            raise ValueError(f"evaluation point {x} is not interior to (0, {length})")


@dataclass(frozen=True)
class ProbeResult:
    """Empirical distribution of the smallest Gram eigenvalue over Monte Carlo runs."""

    epsilons: np.ndarray
    fractions: np.ndarray
    lambda_mins: np.ndarray

    @property
    def sample_count(self) -> int:
        return self.lambda_mins.shape[0]

    def quantiles(self) -> dict[str, float]:
        q = np.quantile(self.lambda_mins, [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0])
        keys = ("min", "q05", "q25", "median", "q75", "q95", "max")
        return {k: float(v) for k, v in zip(keys, q)}


DEFAULT_EPSILON_FACTORS = (1e-3, 1e-2, 1e-1, 0.25, 0.5, 1.0, 2.0)


def nondegeneracy_probe(
    model: ModelSpec,
    config: SchemeConfig,
    points,
    n_samples: int,
    base_seed: int,
    epsilons=None,
    epsilon_factors=DEFAULT_EPSILON_FACTORS,
) -> ProbeResult:
    """Sample smallest eigenvalues of the Gram matrix over independent runs.

    The worst direction of the quadratic form over the unit sphere is the
    eigenvector of the smallest eigenvalue, so lambda_min is exactly the
    quantity whose small-ball probability the probe tabulates.  epsilons=None
    places the grid at ``epsilon_factors`` times the median lambda_min.
    """
    if model.diffusion.lower_bound <= 0.0:
        raise DegenerateDiffusionError(
            f"probe requires a diffusion bounded below by a positive constant; "
            f"family {model.diffusion.family!r} has floor {model.diffusion.lower_bound}"
        )
    run_config = replace(config, store_full=True)
    basis = make_basis(model, run_config)
    x0 = initial_state(model, basis)
    lam_mins = np.empty(n_samples)
    for i in range(n_samples):
        seed = (int(base_seed) ^ i) % 2**64
        path = sample(seed, run_config.resolved_noise_modes, run_config.n_steps, run_config.dt)
        traj = run_scheme(x0, path, model, run_config)
        mat = malliavin_matrix(traj, path, points, model, run_config)
        lam_mins[i] = mat.lambda_min
    if epsilons is None:
        med = float(np.median(lam_mins))
        epsilons = np.array(epsilon_factors) * med
    epsilons = np.asarray(epsilons, dtype=float)
    fractions = np.array([float(np.mean(lam_mins <= eps)) for eps in epsilons])
    return ProbeResult(epsilons, fractions, lam_mins)
