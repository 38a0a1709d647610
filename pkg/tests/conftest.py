"""Shared fixtures: small fitted posteriors and seeded generators."""

import numpy as np
import pytest

from tesbo.gp import Domain, KernelHyperparams, fit_posterior


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def domain_1d():
    return Domain(np.array([0.0]), np.array([10.0]))


@pytest.fixture
def domain_2d():
    return Domain(np.zeros(2), 10.0 * np.ones(2))


@pytest.fixture
def hp_1d():
    return KernelHyperparams(
        signal_variance=2.0, lengthscales=np.array([1.0]), noise_variance=1e-4
    )


@pytest.fixture
def hp_2d():
    return KernelHyperparams(
        signal_variance=2.0, lengthscales=np.array([1.0, 1.0]), noise_variance=1e-4
    )


@pytest.fixture
def post_1d(hp_1d):
    X = np.array([[1.0], [3.0], [4.5], [7.0], [9.0]])
    y = np.array([0.5, -0.3, 1.2, 0.1, -0.8])
    return fit_posterior(X, y, hp_1d)


@pytest.fixture
def post_2d(hp_2d, rng):
    X = rng.uniform(0.0, 10.0, size=(8, 2))
    y = np.sin(X[:, 0]) + 0.3 * np.cos(X[:, 1])
    return fit_posterior(X, y, hp_2d)


def random_posterior(rng, n=5, d=2, noise=1e-2):
    """A random fitted posterior with random SE hyperparameters."""
    hp = KernelHyperparams(
        signal_variance=float(rng.uniform(0.5, 3.0)),
        lengthscales=rng.uniform(0.5, 2.0, size=d),
        noise_variance=noise,
    )
    X = rng.uniform(0.0, 10.0, size=(n, d))
    y = rng.normal(0.0, 1.0, size=n)
    return fit_posterior(X, y, hp)
