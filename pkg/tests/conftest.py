"""Shared fixtures: seeded streams and random model instances."""

import numpy as np
import pytest

from dpresidual import MeasurementModel, SeedStream


@pytest.fixture
def rng():
    """Fixed-seed numpy generator for oracle sampling."""
    return np.random.default_rng(42)


@pytest.fixture
def stream():
    """Fixed-seed package stream for sampling operations."""
    return SeedStream(42)


def random_model(rng, m, n, sigma=1.0, lam=0.0):
    """Full-column-rank Gaussian test instance."""
    return MeasurementModel(H=rng.normal(size=(m, n)), sigma=sigma, lam=lam)


@pytest.fixture
def model_20x5(rng):
    return random_model(rng, 20, 5)
