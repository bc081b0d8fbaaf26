"""Exception types shared across the package."""


class SchsimError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(SchsimError):
    """A study configuration is malformed; the message names the offending field."""


class NumericOverflowError(SchsimError):
    """A grid evaluation produced values beyond the divergence threshold."""


class NewtonDivergedError(SchsimError):
    """The implicit step's Newton iteration failed to converge.

    Usually a sign that the time step is too large for the nonlinearity.
    """

    def __init__(self, message: str, step: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class LinearSolveError(SchsimError):
    """The preconditioned inner linear solve stalled."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DegenerateDiffusionError(SchsimError):
    """A probe requiring a strictly positive diffusion floor got a degenerate one."""


class DegenerateDirectionError(SchsimError):
    """A sample coordinate has zero variance; no density can be estimated for it."""
