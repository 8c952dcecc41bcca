import numpy as np
import pytest

from enkf_lab import GaussianState, LinearModel, kf_run
from enkf_lab.reference import reference_model, scalar_model


@pytest.fixture(scope="session")
def scalar():
    return scalar_model()


@pytest.fixture(scope="session")
def scalar_kf(scalar):
    model, init = scalar
    return kf_run(model, init)


@pytest.fixture(scope="session")
def reference():
    return reference_model()


@pytest.fixture(scope="session")
def reference_kf(reference):
    model, init = reference
    return kf_run(model, init)


@pytest.fixture(scope="session")
def empty_scalar():
    """A 0-step model: nothing but the initial condition."""
    model = LinearModel(steps=(), state_dim=1, obs_dim=1)
    return model, GaussianState(mean=[0.5], cov=[[2.0]])


def random_spd(rng, dim, scale=1.0):
    g = rng.standard_normal((dim, dim))
    return scale * (g @ g.T) + 0.1 * scale * np.eye(dim)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
