"""Drift-implicit Euler time stepping in spectral coordinates.

One step solves

    (I + dt*A^2) X_{k+1} + dt * A * P_N F(X_{k+1}) = X_k + P_N[sigma(X_k) * dW_k]

by Newton iteration on the N coefficients.  The linear part is diagonal, so the
Jacobian (I + dt*A^2) + dt*A*P_N*diag(F'(X))*eval is applied matrix-free
(transform, multiply, transform back) and each Newton correction is solved by
iterative refinement preconditioned with the diagonal (I + dt*A^2).

The splitting variant advances the drift part and the noise part in parallel
with the drift evaluated explicitly, which is the decomposition used for
moment and regularity diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import guard_grid, sigma
from .errors import LinearSolveError, NewtonDivergedError
from .model import ModelSpec
from .noise import NoisePath
from .spectral import (
    DirichletBasis,
    SpectralField,
    build_basis,
    coeffs_from_grid,
    grid_from_coeffs,
)

_INNER_TOL = 1e-14
_INNER_MAX_ITER = 400


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization sizes and solver knobs; dt is always horizon / n_steps."""

    n_modes: int
    n_steps: int
    horizon: float = 0.5
    noise_modes: int | None = None   # default 2*n_modes
    grid_size: int | None = None     # default max(2*n_modes, noise_modes)
    newton_rel_tol: float = 1e-12
    newton_max_iter: int = 50
    divergence_threshold: float = 1e8
    store_full: bool = False
    snapshot_stride: int | None = None  # default ceil(n_steps / 256)

    def __post_init__(self):
        if self.n_modes < 1 or self.n_steps < 1:
            raise ValueError("n_modes and n_steps must be positive")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        nm = self.resolved_noise_modes
        if nm < self.n_modes:
            raise ValueError(f"noise_modes={nm} must be at least n_modes={self.n_modes}")
        if self.resolved_grid_size < max(2 * self.n_modes, nm):
            raise ValueError(
                f"grid_size={self.resolved_grid_size} too small for de-aliasing "
                f"(needs max(2*n_modes, noise_modes) = {max(2 * self.n_modes, nm)})"
            )
        if self.newton_rel_tol <= 0 or self.newton_max_iter < 1:
            raise ValueError("Newton tolerance and iteration cap must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def resolved_noise_modes(self) -> int:
        return self.noise_modes if self.noise_modes is not None else 2 * self.n_modes

    @property
    def resolved_grid_size(self) -> int:
        if self.grid_size is not None:
            return self.grid_size
        return max(2 * self.n_modes, self.resolved_noise_modes)

    @property
    def resolved_stride(self) -> int:
        if self.store_full:
            return 1
        if self.snapshot_stride is not None:
            return max(1, self.snapshot_stride)
        return max(1, math.ceil(self.n_steps / 256))


@dataclass(frozen=True)
class StepReport:
    converged: bool
    iterations: int
    residual: float
    residual_history: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored states (possibly strided; step 0 and the final step always kept)."""

    basis: DirichletBasis
    config: SchemeConfig
    steps: np.ndarray           # stored step indices, ascending
    states: np.ndarray          # (len(steps), n_modes)
    newton_iters: np.ndarray    # per executed step
    residuals: np.ndarray       # final Newton residual per executed step
    noise_fingerprint: tuple | None
    kind: str = "full"

    @property
    def final_coeffs(self) -> np.ndarray:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.config.dt

    def state(self, step: int) -> np.ndarray:
        idx = np.searchsorted(self.steps, step)
        if idx >= len(self.steps) or self.steps[idx] != step:
            raise KeyError(f"step {step} is not stored (stride {self.config.resolved_stride})")
        return self.states[idx]

    def field_at(self, step: int) -> SpectralField:
        return SpectralField(self.state(step).copy(), self.basis)

    @property
    def is_full(self) -> bool:
        return len(self.steps) == self.config.n_steps + 1


def make_basis(model: ModelSpec, config: SchemeConfig) -> DirichletBasis:
    return build_basis(model.length, config.n_modes, config.resolved_grid_size)


def initial_state(model: ModelSpec, basis: DirichletBasis) -> SpectralField:
    return SpectralField(model.initial.coefficients(basis.n_modes), basis)


def _check_noise(noise: NoisePath, config: SchemeConfig) -> None:
    if noise.n_modes != config.resolved_noise_modes:
        raise ValueError(
            f"noise has {noise.n_modes} modes but the scheme expects {config.resolved_noise_modes}"
        )
    if noise.n_steps != config.n_steps:
        raise ValueError(f"noise has {noise.n_steps} steps but the scheme expects {config.n_steps}")
    if abs(noise.dt - config.dt) > 1e-12 * config.dt:
        raise ValueError(f"noise step {noise.dt} does not match scheme step {config.dt}")


class _Stepper:
    """Per-run workspace: precomputed diagonals and the Nemytskii pipeline."""

    def __init__(self, model: ModelSpec, config: SchemeConfig, basis: DirichletBasis):
        self.model = model
        self.config = config
        self.basis = basis
        self.dt = config.dt
        lam = basis.eigenvalues
        self.diag = 1.0 + lam**2 * self.dt
        self.dt_lam = self.dt * lam
        self.threshold = config.divergence_threshold

    # -- pointwise pipelines ------------------------------------------------
    def grid_of(self, coeffs: np.ndarray) -> np.ndarray:
        return guard_grid(grid_from_coeffs(coeffs, self.basis), self.threshold)

    def drift_term(self, grid_x: np.ndarray) -> np.ndarray:
        """dt * A * P_N F(X) in coefficients, from grid values of X."""
        return self.dt_lam * coeffs_from_grid(self.model.drift_values(grid_x), self.basis, self.config.n_modes)

    def noise_term(self, grid_x: np.ndarray, increments: np.ndarray) -> np.ndarray:
        """P_N[sigma(X) * sum_j e_j dBeta_j] in coefficients."""
        noise_grid = grid_from_coeffs(increments, self.basis)
        product = sigma(self.model.diffusion, grid_x) * noise_grid
        return coeffs_from_grid(product, self.basis, self.config.n_modes)

    # -- linear algebra -----------------------------------------------------
    def jacobian_apply(self, v: np.ndarray, slope_grid: np.ndarray) -> np.ndarray:
        """(I + dt A^2) v + dt A P_N [F'(X) * v]; batched over leading axes."""
        gv = grid_from_coeffs(v, self.basis)
        return self.diag * v + self.dt_lam * coeffs_from_grid(slope_grid * gv, self.basis, self.config.n_modes)

    def solve_linearized(self, b: np.ndarray, slope_grid: np.ndarray, step: int | None = None) -> np.ndarray:
        """Solve [(I + dt A^2) + dt A P_N diag(F'(X))] x = b by diagonal-preconditioned
        iterative refinement; exact in one pass when the drift is absent.

        Batched right-hand sides (rows along leading axes) converge per row.
        """
        x = b / self.diag
        if not self.model.has_drift:
            return x
        with np.errstate(over="ignore", invalid="ignore"):
            r = b - self.jacobian_apply(x, slope_grid)
            if b.ndim == 1:
                floor2 = _INNER_TOL**2 * max(float(b @ b), 1e-300)
                for _ in range(_INNER_MAX_ITER):
                    rsq = float(r @ r)
                    if rsq <= floor2:
                        return x
                    if not math.isfinite(rsq):
                        break
                    delta = r / self.diag
                    x += delta
                    r -= self.jacobian_apply(delta, slope_grid)
                worst = math.sqrt(rsq / floor2)
            else:
                sq = np.einsum("...i,...i->...", b, b)
                floor2 = _INNER_TOL**2 * np.maximum(sq, 1e-300)
                for _ in range(_INNER_MAX_ITER):
                    rsq = np.einsum("...i,...i->...", r, r)
                    if (rsq <= floor2).all():
                        return x
                    if not np.all(np.isfinite(rsq)):
                        break
                    delta = r / self.diag
                    x += delta
                    r -= self.jacobian_apply(delta, slope_grid)
                worst = math.sqrt(float(np.max(rsq / floor2)))
        raise LinearSolveError(
            f"inner refinement stalled (worst residual {worst:.3e}x the tolerance floor; "
            "the step size may be too large for the drift linearization)",
            step=step,
        )

    # -- one implicit step ----------------------------------------------------
    def step(self, x: np.ndarray, increments: np.ndarray, step_index: int | None = None) -> tuple[np.ndarray, StepReport]:
        grid_x = self.grid_of(x)
        rhs = x + self.noise_term(grid_x, increments)
        if not self.model.has_drift:
            return rhs / self.diag, StepReport(True, 1, 0.0, (0.0,))

        cfg = self.config
        rhs_norm = max(math.sqrt(float(rhs @ rhs)), 1e-300)
        c = x.copy()
        history: list[float] = []
        grow = 0
        prev = math.inf
        for it in range(cfg.newton_max_iter + 1):
            grid_c = self.grid_of(c)
            with np.errstate(over="ignore", invalid="ignore"):
                residual_vec = self.diag * c + self.drift_term(grid_c) - rhs
                res = math.sqrt(abs(float(residual_vec @ residual_vec)))
            history.append(res)
            if not math.isfinite(res):
                raise NewtonDivergedError(
                    f"Newton residual became non-finite at step {step_index}",
                    step=step_index, residual=res,
                )
            if res <= cfg.newton_rel_tol * rhs_norm:
                return c, StepReport(True, it, res, tuple(history))
            grow = grow + 1 if res > prev else 0
            if grow >= 3:
                raise NewtonDivergedError(
                    f"Newton residual growing at step {step_index} "
                    f"(dt={self.dt:.3e} likely above the scheme's stability threshold)",
                    step=step_index, residual=res,
                )
            prev = res
            slope_grid = self.model.drift_slope_values(grid_c)
            c = c + self.solve_linearized(-residual_vec, slope_grid, step=step_index)
        raise NewtonDivergedError(
            f"Newton hit the iteration cap {cfg.newton_max_iter} at step {step_index} "
            f"(residual {history[-1]:.3e}, rhs {rhs_norm:.3e})",
            step=step_index, residual=history[-1],
        )


def implicit_step(
    x: SpectralField, increments: np.ndarray, model: ModelSpec, config: SchemeConfig
) -> tuple[SpectralField, StepReport]:
    """Advance one step from state ``x`` using one column of noise increments."""
    stepper = _Stepper(model, config, x.basis)
    increments = np.asarray(increments, dtype=float)
    if increments.shape != (config.resolved_noise_modes,):
        raise ValueError(
            f"expected {config.resolved_noise_modes} increments, got {increments.shape}"
        )
    out, report = stepper.step(x.coeffs, increments)
    return SpectralField(out, x.basis), report


def _storage_plan(config: SchemeConfig) -> np.ndarray:
    stride = config.resolved_stride
    steps = list(range(0, config.n_steps + 1, stride))
    if steps[-1] != config.n_steps:
        steps.append(config.n_steps)
    return np.asarray(steps, dtype=int)


def run_scheme(
    x0: SpectralField,
    noise: NoisePath,
    model: ModelSpec,
    config: SchemeConfig,
    kind: str = "full",
) -> Trajectory:
    """Run all steps; aborts with the failing step index on solver divergence."""
    _check_noise(noise, config)
    basis = x0.basis
    if basis.n_modes != config.n_modes or basis.grid_size != config.resolved_grid_size:
        raise ValueError("initial state basis does not match the scheme configuration")
    stepper = _Stepper(model, config, basis)
    stored = _storage_plan(config)
    states = np.empty((len(stored), config.n_modes))
    newton_iters = np.zeros(config.n_steps, dtype=np.int32)
    residuals = np.zeros(config.n_steps)
    x = x0.coeffs.copy()
    states[0] = x
    write = 1
    inc = noise.increments
    for k in range(config.n_steps):
        x, report = stepper.step(x, inc[:, k], step_index=k)
        newton_iters[k] = report.iterations
        residuals[k] = report.residual
        if write < len(stored) and stored[write] == k + 1:
            states[write] = x
            write += 1
    return Trajectory(
        basis=basis, config=config, steps=stored, states=states,
        newton_iters=newton_iters, residuals=residuals,
        noise_fingerprint=noise.fingerprint(), kind=kind,
    )


def run_split_scheme(
    x0: SpectralField, noise: NoisePath, model: ModelSpec, config: SchemeConfig
) -> tuple[Trajectory, Trajectory]:
    """Advance the drift part Y (explicit drift under the resolvent) and the noise
    part Z (discrete stochastic convolution) whose sum tracks the full scheme.

    Y_{k+1} = T_dt (Y_k - dt A P_N F(Y_k + Z_k)),  Y_0 = X_0
    Z_{k+1} = T_dt (Z_k + P_N[sigma(Y_k + Z_k) dW_k]),  Z_0 = 0
    """
    _check_noise(noise, config)
    basis = x0.basis
    stepper = _Stepper(model, config, basis)
    stored = _storage_plan(config)
    y_states = np.empty((len(stored), config.n_modes))
    z_states = np.empty((len(stored), config.n_modes))
    y = x0.coeffs.copy()
    z = np.zeros(config.n_modes)
    y_states[0], z_states[0] = y, z
    write = 1
    inc = noise.increments
    zeros = np.zeros(config.n_steps)
    for k in range(config.n_steps):
        grid_sum = stepper.grid_of(y + z)
        y_new = (y - stepper.drift_term(grid_sum)) / stepper.diag
        z_new = (z + stepper.noise_term(grid_sum, inc[:, k])) / stepper.diag
        y, z = y_new, z_new
        if write < len(stored) and stored[write] == k + 1:
            y_states[write], z_states[write] = y, z
            write += 1
    def mk(arr: np.ndarray, kind: str) -> Trajectory:
        return Trajectory(
            basis=basis, config=config, steps=stored, states=arr,
            newton_iters=np.zeros(config.n_steps, dtype=np.int32), residuals=zeros,
            noise_fingerprint=noise.fingerprint(), kind=kind,
        )

    return mk(y_states, "split-drift"), mk(z_states, "split-noise")


def reference_solution(
    x0: SpectralField, noise: NoisePath, model: ModelSpec, config: SchemeConfig
) -> Trajectory:
    """A fine-discretization run used as the surrogate truth in rate studies."""
    return run_scheme(x0, noise, model, config, kind="reference")


# ---------------------------------------------------------------------------
# Comparison helpers across discretizations
# ---------------------------------------------------------------------------

def embed_coeffs(coeffs: np.ndarray, n_modes: int) -> np.ndarray:
    """Zero-pad into a finer spectral space (exact for nested sine bases)."""
    if coeffs.shape[-1] > n_modes:
        raise ValueError("cannot embed into a coarser space")
    pad = [(0, 0)] * (coeffs.ndim - 1) + [(0, n_modes - coeffs.shape[-1])]
    return np.pad(coeffs, pad)


def restrict_coeffs(coeffs: np.ndarray, n_modes: int) -> np.ndarray:
    """Spectral projection onto the first n_modes (drop the rest)."""
    if coeffs.shape[-1] < n_modes:
        raise ValueError("cannot restrict to a finer space")
    return np.ascontiguousarray(coeffs[..., :n_modes])


def difference_norm(
    coarse: np.ndarray, fine: np.ndarray, fine_basis: DirichletBasis, alpha: float = 0.0
) -> float:
    """Sobolev-alpha norm of (embedded coarse) - fine in the fine basis."""
    diff = embed_coeffs(coarse, fine.shape[-1]) - fine
    if alpha == 0.0:
        return float(np.linalg.norm(diff))
    w = fine_basis.eigenvalues[: diff.shape[-1]] ** alpha
    return float(np.sqrt(np.sum(w * diff**2)))


def ginzburg_landau_energy(coeffs: np.ndarray, model: ModelSpec, basis: DirichletBasis) -> float:
    """integral of 0.5 |grad X|^2 + f(X): gradient part exact by Parseval,
    potential part by grid quadrature."""
    from .coefficients import f_value

    grad_part = 0.5 * float(np.sum(basis.eigenvalues[: coeffs.shape[-1]] * coeffs**2))
    if model.potential is None:
        return grad_part
    grid = grid_from_coeffs(coeffs, basis)
    return grad_part + basis.quadrature_weight * float(np.sum(f_value(model.potential, grid)))


def export_trajectory_csv(traj: Trajectory, file_path, grid_values: bool = False) -> None:
    """Write stored states: columns step, time, then coefficients (or node values)."""
    n = traj.basis.grid_size if grid_values else traj.config.n_modes
    labels = [f"x{m}" for m in range(1, n + 1)] if grid_values else [f"c{j}" for j in range(1, n + 1)]
    lines = ["step,time," + ",".join(labels)]
    for i, step in enumerate(traj.steps):
        row = traj.states[i]
        if grid_values:
            row = grid_from_coeffs(row, traj.basis)
        t = float(step * traj.config.dt)
        lines.append(f"{int(step)},{t!r}," + ",".join(repr(float(v)) for v in row))
    with open(file_path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
