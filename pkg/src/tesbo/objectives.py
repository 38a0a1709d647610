"""Synthetic benchmark objectives, negated for maximization.

Named test functions come with their analytic optimum; GP-sampled objectives
are seeded random-feature prior draws whose optimum is estimated by
multi-start search at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import Domain, KernelHyperparams
from .sampling import FeatureFunctionSample, maximize_sampled_function


@dataclass(frozen=True)
class Objective:
    name: str
    fn: callable  # maps (n, d) -> (n,)
    domain: Domain
    optimum: float

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.asarray(self.fn(X), dtype=float)


def _branin_unit(X: np.ndarray) -> np.ndarray:
    # Branin rescaled to the unit square, negated
    x1 = 15.0 * X[:, 0] - 5.0
    x2 = 15.0 * X[:, 1]
    a, b, c = 1.0, 5.1 / (4 * np.pi**2), 5.0 / np.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * np.pi)
    val = a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s
    return -val


_H3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_H3_P = 1e-4 * np.array(
    [[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]]
)
_H4_A = np.array(
    [
        [10, 3, 17, 3.5],
        [0.05, 10, 17, 0.1],
        [3, 3.5, 1.7, 10],
        [17, 8, 0.05, 10],
    ]
)
_H4_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124],
        [2329, 4135, 8307, 3736],
        [2348, 1451, 3522, 2883],
        [4047, 8828, 8732, 5743],
    ]
)
_H_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])


def _hartmann(X: np.ndarray, A: np.ndarray, P: np.ndarray) -> np.ndarray:
    inner = np.einsum("ij,nij->ni", A, (X[:, None, :] - P[None, :, :]) ** 2)
    return np.exp(-inner) @ _H_ALPHA


def _hartmann4(X: np.ndarray) -> np.ndarray:
    # rescaled 4-D variant over the first four coordinates of the 6-D family
    return (_hartmann(X, _H4_A, _H4_P) - 1.1) / 0.839


def make_gp_sample_objective(
    domain: Domain,
    hyperparams: KernelHyperparams,
    seed: int,
    n_features: int = 1024,
    optimum_restarts: int = 100,
) -> Objective:
    """A seeded prior function draw realized with random features.

    The same seed reproduces the identical objective in any process. The
    optimum is estimated with a dense multi-start gradient search.
    """
    rng = np.random.default_rng(seed)
    d = domain.dim
    W = rng.standard_normal((n_features, d)) / hyperparams.lengthscales
    b = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    theta = rng.standard_normal(n_features)
    amplitude = np.sqrt(2.0 * hyperparams.signal_variance / n_features)
    sample = FeatureFunctionSample(W, b, theta, amplitude)
    x_best = maximize_sampled_function(sample, domain, optimum_restarts, rng)
    f_best = float(sample(x_best[None, :])[0])
    return Objective(
        name=f"gp-sample-{seed}",
        fn=lambda X: sample(X),
        domain=domain,
        optimum=f_best,
    )


def objective(name: str, seed: int = 0, **params) -> Objective:
    """Look up a benchmark objective by name.

    Known names: gp-sample, branin, hartmann3, hartmann4. Named functions
    are negated so the harness always maximizes.
    """
    if name == "branin":
        return Objective(
            name="branin",
            fn=_branin_unit,
            domain=Domain(np.zeros(2), np.ones(2)),
            optimum=-0.39788735772973816,
        )
    if name == "hartmann3":
        return Objective(
            name="hartmann3",
            fn=lambda X: _hartmann(X, _H3_A, _H3_P),
            domain=Domain(np.zeros(3), np.ones(3)),
            optimum=3.862779787332663,
        )
    if name == "hartmann4":
        return Objective(
            name="hartmann4",
            fn=_hartmann4,
            domain=Domain(np.zeros(4), np.ones(4)),
            optimum=3.134494141222399,
        )
    if name == "gp-sample":
        domain = Domain(
            np.asarray(params.get("lower", [0.0, 0.0]), dtype=float),
            np.asarray(params.get("upper", [10.0, 10.0]), dtype=float),
        )
        hp = KernelHyperparams(
            signal_variance=params.get("signal_variance", 2.0),
            lengthscales=np.full(domain.dim, params.get("lengthscale", 1.0)),
            noise_variance=0.0,
        )
        return make_gp_sample_objective(
            domain, hp, seed, n_features=params.get("n_features", 1024)
        )
    raise ValueError(f"unknown objective {name!r}")
