import numpy as np
import pytest

from schsim import (
    DiffusionSpec,
    InitialCondition,
    ModelSpec,
    Potential,
    SchemeConfig,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def linear_model():
    """Zero drift, zero noise: the scheme reduces to the diagonal resolvent."""
    return ModelSpec(
        length=1.0, horizon=0.5, potential=None,
        diffusion=DiffusionSpec("constant", a=0.0),
        initial=InitialCondition("smooth", amplitude=0.5),
    )


@pytest.fixture
def additive_model():
    """Zero drift, unit constant noise from rest: the discrete stochastic convolution."""
    return ModelSpec(
        length=1.0, horizon=0.5, potential=None,
        diffusion=DiffusionSpec("constant", a=1.0),
        initial=InitialCondition("zero"),
    )


@pytest.fixture
def full_model():
    """Double-well drift with the sublinear non-degenerate diffusion."""
    return ModelSpec(
        length=1.0, horizon=0.5, potential=Potential.double_well(),
        diffusion=DiffusionSpec("sublinear_power", a=0.5, b=0.25, alpha=0.5),
        initial=InitialCondition("smooth", amplitude=0.5),
    )


@pytest.fixture
def smoke_scheme():
    return SchemeConfig(n_modes=16, n_steps=64, horizon=0.5, store_full=True)
