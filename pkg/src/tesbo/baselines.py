"""Reference acquisitions: expected improvement, upper confidence bound, and
greedy constant-liar batch expected improvement."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .gp import Domain, GPPosterior, fit_posterior


def ei(post: GPPosterior, x: np.ndarray, incumbent: float) -> float:
    """Expected improvement of the latent value over the incumbent."""
    mean, cov = post.predict(np.atleast_2d(x))
    mu, sigma = float(mean[0]), float(np.sqrt(max(cov[0, 0], 0.0)))
    if sigma < 1e-14:
        return float(max(mu - incumbent, 0.0))
    z = (mu - incumbent) / sigma
    return float(sigma * (z * norm.cdf(z) + norm.pdf(z)))


def ucb(post: GPPosterior, x: np.ndarray, beta: float) -> float:
    """mu(x) + sqrt(beta) * sigma(x)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    mean, cov = post.predict(np.atleast_2d(x))
    return float(mean[0] + np.sqrt(beta) * np.sqrt(max(cov[0, 0], 0.0)))


def ucb_beta_schedule(dim: int, iteration: int) -> float:
    """Common logarithmic exploration schedule, growing with the iteration count."""
    t = max(iteration, 1)
    return 2.0 * np.log(dim * t**2 * np.pi**2 / 6.0)


def maximize_deterministic(
    acq, domain: Domain, rng: np.random.Generator, restarts: int = 20
) -> np.ndarray:
    """Multi-start maximization of a deterministic acquisition."""
    bounds = list(zip(domain.lower, domain.upper))
    best_x, best_val = None, np.inf
    for x0 in domain.sample_uniform(restarts, rng):
        res = minimize(lambda x: -acq(x), x0, method="L-BFGS-B", bounds=bounds)
        if res.fun < best_val:
            best_val, best_x = res.fun, res.x
    return domain.clip(best_x)


def constant_liar_batch(
    post: GPPosterior,
    incumbent: float,
    batch_size: int,
    domain: Domain,
    rng: np.random.Generator,
    lie: str = "max",
    restarts: int = 20,
) -> np.ndarray:
    """Greedy batch: pick the EI maximizer, fabricate its observation, refit, repeat.

    ``lie`` selects the fabricated value: "max" uses the incumbent (current
    best observation), "mean" uses the posterior mean at the chosen point.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    X = post.X.copy()
    y = post.y.copy()
    cur = post
    points = []
    for _ in range(batch_size):
        x_next = maximize_deterministic(
            lambda x: ei(cur, x, incumbent), domain, rng, restarts=restarts
        )
        points.append(x_next)
        if lie == "max":
            fabricated = incumbent
        elif lie == "mean":
            fabricated = float(cur.predict(x_next[None, :])[0][0])
        else:
            raise ValueError(f"unknown lie strategy {lie!r}")
        X = np.vstack([X, x_next[None, :]]) if X.size else x_next[None, :]
        y = np.append(y, fabricated)
        cur = fit_posterior(X, y, post.hyperparams)
    return np.array(points)
