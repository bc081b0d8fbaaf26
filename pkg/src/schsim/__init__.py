"""Simulation and analysis toolkit for the 1-D stochastic Cahn-Hilliard equation
driven by multiplicative space-time white noise.

Core pieces: a Dirichlet sine spectral basis with exact transform quadrature,
a drift-implicit Euler integrator with matrix-free Newton steps, pathwise
coupled noise for strong-rate studies, tangent processes probing the
non-degeneracy of the Malliavin covariance matrix, and kernel density
estimation of the solution's law at fixed space-time points.
"""

from .coefficients import CutoffSpec, DiffusionSpec, Potential
from .density import DensityEstimate, SampleSet, collect_samples, kde, positivity_report
from .errors import (
    ConfigError,
    DegenerateDiffusionError,
    DegenerateDirectionError,
    LinearSolveError,
    NewtonDivergedError,
    NumericOverflowError,
    SchsimError,
)
from .integrator import (
    SchemeConfig,
    StepReport,
    Trajectory,
    implicit_step,
    initial_state,
    make_basis,
    reference_solution,
    run_scheme,
    run_split_scheme,
)
from .malliavin import (
    MalliavinMatrix,
    ProbeResult,
    TangentDirection,
    malliavin_matrix,
    nondegeneracy_probe,
    propagate_tangent,
)
from .model import InitialCondition, ModelSpec
from .noise import NoisePath, ShiftSpec, coarsen, load_noise, sample, save_noise, shift
from .spectral import (
    DirichletBasis,
    GridField,
    SpectralField,
    apply_laplacian_power,
    apply_resolvent,
    apply_semigroup,
    build_basis,
    field,
    green_function,
    sobolev_norm,
    to_grid,
    to_spectral,
    zero_field,
)
from .studies import (
    RateReport,
    StudyConfig,
    run_regularity,
    run_spatial_rate,
    run_study,
    run_temporal_rate,
)

__version__ = "0.1.0"
