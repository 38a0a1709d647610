"""Synthetic objectives and their frozen optima."""

import numpy as np
import pytest

from tesbo.objectives import objective


class TestNamedObjectives:
    def test_branin_optimum(self):
        # verified against a 4000-start L-BFGS search (tesbo oracle branin-optimum)
        obj = objective("branin")
        assert obj.optimum == pytest.approx(-0.397887, abs=1e-6)
        # all three known optimizer locations, rescaled to the unit square
        for x1, x2 in [(-np.pi, 12.275), (np.pi, 2.275), (9.42478, 2.475)]:
            u = np.array([(x1 + 5.0) / 15.0, x2 / 15.0])
            assert obj(u[None, :])[0] == pytest.approx(obj.optimum, abs=1e-5)

    def test_hartmann3_optimum(self):
        obj = objective("hartmann3")
        assert obj.optimum == pytest.approx(3.86278, abs=1e-5)
        x = np.array([0.114614, 0.555649, 0.852547])
        assert obj(x[None, :])[0] == pytest.approx(obj.optimum, abs=1e-5)

    def test_hartmann4_optimum_attained(self):
        obj = objective("hartmann4")
        rng = np.random.default_rng(0)
        from scipy.optimize import minimize

        best = np.inf
        for x0 in rng.uniform(0.0, 1.0, size=(200, 4)):
            res = minimize(
                lambda x: -obj(x[None, :])[0], x0, method="Nelder-Mead",
                options={"xatol": 1e-10, "fatol": 1e-12},
            )
            best = min(best, res.fun)
        assert -best == pytest.approx(obj.optimum, abs=1e-6)

    def test_values_never_exceed_optimum(self):
        rng = np.random.default_rng(1)
        for name in ("branin", "hartmann3", "hartmann4"):
            obj = objective(name)
            X = rng.uniform(obj.domain.lower, obj.domain.upper, size=(2000, obj.domain.dim))
            assert np.all(obj(X) <= obj.optimum + 1e-9)

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            objective("rosenbrock")


class TestGpSample:
    def test_deterministic_across_constructions(self):
        a = objective("gp-sample", seed=3, n_features=256)
        b = objective("gp-sample", seed=3, n_features=256)
        X = np.random.default_rng(0).uniform(0.0, 10.0, size=(20, 2))
        assert a(X) == pytest.approx(b(X))
        assert a.optimum == b.optimum

    def test_different_seeds_differ(self):
        a = objective("gp-sample", seed=1, n_features=256)
        b = objective("gp-sample", seed=2, n_features=256)
        X = np.random.default_rng(0).uniform(0.0, 10.0, size=(20, 2))
        assert not np.allclose(a(X), b(X))

    def test_optimum_upper_bounds_samples(self):
        obj = objective("gp-sample", seed=5, n_features=256)
        X = np.random.default_rng(2).uniform(0.0, 10.0, size=(5000, 2))
        assert np.all(obj(X) <= obj.optimum + 1e-6)

    def test_domain_parameters(self):
        obj = objective("gp-sample", seed=0, lower=[0.0], upper=[5.0], n_features=64)
        assert obj.domain.dim == 1
        assert obj.domain.upper[0] == 5.0
