"""Shared fixtures: one session-scoped toy body model plus tiny scenes."""

import numpy as np
import pytest

from omrfit.body_model import MeshParams, make_toy_model
from omrfit.data_synth import synth_observation


@pytest.fixture(scope="session")
def model():
    return make_toy_model(seed=0)


@pytest.fixture(scope="session")
def neutral(model):
    return MeshParams.neutral(model.n_shape, model.n_joints)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def observation(model):
    # one normal-shape sample at the resolution the fitting tests use
    rng = np.random.default_rng(7)
    return synth_observation(model, rng, "obs0000", "normal", noise=0.01, resolution=32)


@pytest.fixture(scope="session")
def observations(model):
    rng = np.random.default_rng(11)
    return [
        synth_observation(model, rng, f"s{i:04d}", "normal", noise=0.01, resolution=32)
        for i in range(4)
    ]
