"""Shared fixtures: small, deterministic model setups reused across modules."""

import numpy as np
import pytest

from qoicheck.inference import McmcConfig, sample_posterior_cs1, sample_posterior_cs2
from qoicheck.models import (
    CS1,
    CS2,
    draw_prior,
    make_spec,
    simulate_covariates_cs1,
    simulate_covariates_cs2,
    simulate_response,
)
from qoicheck.rngdist import SeedStream
from qoicheck.smooth import build_smooth


@pytest.fixture(scope="session")
def cs1_spec():
    return make_spec(CS1, N=200, G=10)


@pytest.fixture(scope="session")
def cs1_setup(cs1_spec):
    """One simulated CS1 replication: (theta, data, stream root)."""
    stream = SeedStream(314, 0)
    theta = draw_prior(cs1_spec, stream.child("prior"))
    data = simulate_covariates_cs1(cs1_spec, stream.child("covariates"))
    data = simulate_response(cs1_spec, theta, data, stream.child("response"))
    return theta, data, stream


@pytest.fixture(scope="session")
def cs1_posterior(cs1_spec, cs1_setup):
    theta, data, stream = cs1_setup
    return sample_posterior_cs1(data, cs1_spec, McmcConfig(), stream.child("fit"))


@pytest.fixture(scope="session")
def cs2_spec():
    return make_spec(CS2, N=400, k=10)


@pytest.fixture(scope="session")
def cs2_setup(cs2_spec):
    """One simulated CS2 replication: (theta, data, basis, stream root)."""
    stream = SeedStream(271, 0)
    theta = draw_prior(cs2_spec, stream.child("prior"))
    data = simulate_covariates_cs2(cs2_spec, theta, stream.child("covariates"))
    basis = build_smooth(data, cs2_spec.k)
    data = simulate_response(cs2_spec, theta, data, stream.child("response"), basis=basis)
    return theta, data, basis, stream


@pytest.fixture(scope="session")
def cs2_posterior(cs2_spec, cs2_setup):
    theta, data, basis, stream = cs2_setup
    return sample_posterior_cs2(data, cs2_spec, basis, McmcConfig(), stream.child("fit"))


@pytest.fixture()
def rng():
    return np.random.default_rng(20260815)
