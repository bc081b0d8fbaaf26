"""The full problem description: domain, horizon, coefficients, initial state."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .coefficients import (
    CutoffSpec,
    DiffusionSpec,
    Potential,
    f_prime,
    f_second,
    truncated_drift,
    truncated_drift_prime,
)

_INITIAL_KINDS = ("zero", "modes", "smooth", "rough")


@dataclass(frozen=True)
class InitialCondition:
    """Initial state given in spectral coordinates.

    kinds:
      zero    flat start
      modes   explicit leading coefficients
      smooth  first four modes with geometrically decaying weights (amplitude
              scales the leading one); effectively arbitrarily regular
      rough   coefficients amplitude * (-1)^(j+1) j^-(gamma + 1/2), normalized
              to L2 norm = amplitude; borderline member of the gamma-smoothness
              scale, used to expose regularity-limited rates
    """

    kind: str = "smooth"
    amplitude: float = 0.5
    gamma: float = 1.0
    coeffs: tuple[float, ...] = dc_field(default=())

    def __post_init__(self):
        if self.kind not in _INITIAL_KINDS:
            raise ValueError(f"unknown initial-condition kind {self.kind!r}; choose from {_INITIAL_KINDS}")
        if self.kind == "modes" and not self.coeffs:
            raise ValueError("initial kind 'modes' needs explicit coefficients")

    def coefficients(self, n_modes: int) -> np.ndarray:
        out = np.zeros(n_modes)
        if self.kind == "zero":
            return out
        if self.kind == "modes":
            k = min(len(self.coeffs), n_modes)
            out[:k] = self.coeffs[:k]
            return out
        if self.kind == "smooth":
            k = min(4, n_modes)
            out[:k] = self.amplitude * 0.5 ** np.arange(k)
            return out
        j = np.arange(1, n_modes + 1, dtype=float)
        raw = (-1.0) ** (j + 1) * j ** (-(self.gamma + 0.5))
        out[:] = self.amplitude * raw / np.linalg.norm(raw)
        return out


@dataclass(frozen=True)
class ModelSpec:
    """Everything problem-specific: domain length, horizon, and coefficients.

    ``potential=None`` selects the zero-drift (purely linear) test model.
    ``cutoff`` switches the drift to its smoothly truncated variant.
    """

    length: float = 1.0
    horizon: float = 0.5
    potential: Potential | None = Potential.double_well()
    diffusion: DiffusionSpec = DiffusionSpec("constant", a=1.0)
    cutoff: CutoffSpec | None = None
    initial: InitialCondition = InitialCondition()

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"domain length must be positive, got {self.length}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def has_drift(self) -> bool:
        return self.potential is not None

    def drift_values(self, grid: np.ndarray) -> np.ndarray:
        """Pointwise drift density on grid values (cutoff applied when configured)."""
        if self.potential is None:
            return np.zeros_like(grid)
        if self.cutoff is None:
            return f_prime(self.potential, grid)
        return truncated_drift(self.potential, self.cutoff, grid)

    def drift_slope_values(self, grid: np.ndarray) -> np.ndarray:
        """Pointwise derivative of the drift density (enters Jacobians and tangents)."""
        if self.potential is None:
            return np.zeros_like(grid)
        if self.cutoff is None:
            return f_second(self.potential, grid)
        return truncated_drift_prime(self.potential, self.cutoff, grid)
