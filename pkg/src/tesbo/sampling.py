"""Trusted-maximizer set construction from approximate posterior function samples.

Posterior functions are drawn with a random trigonometric feature expansion
of the SE kernel; each sample is maximized over the box domain, the
maximizers are deduplicated, and each surviving point is assigned the
probability that it attains the maximum of the latent function over the set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .gp import (
    Domain,
    GPPosterior,
    KernelHyperparams,
    chol_with_jitter,
    se_kernel_matrix,
)


@dataclass(frozen=True)
class FeatureFunctionSample:
    """A differentiable approximate draw from the GP posterior.

    f(x) = theta @ phi(x) with phi_j(x) = sqrt(2 sigma_s^2 / m) * cos(W_j @ x + b_j),
    frequencies W drawn from the SE spectral density and weights theta from
    the Bayesian linear-model posterior induced by the training data.
    """

    frequencies: np.ndarray  # (m, d)
    phases: np.ndarray  # (m,)
    weights: np.ndarray  # (m,)
    amplitude: float

    def features(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.amplitude * np.cos(X @ self.frequencies.T + self.phases)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.features(X) @ self.weights

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = np.sin(self.frequencies @ x + self.phases)
        return -(self.weights * self.amplitude * s) @ self.frequencies


@dataclass(frozen=True)
class TrustedSet:
    """Finite set of trusted maximizers with per-element argmax probabilities."""

    points: np.ndarray  # (k, d)
    probabilities: np.ndarray  # (k,)
    prob_stderr: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return self.points.shape[0]


def comparison_matrix(size: int, index: int) -> np.ndarray:
    """Matrix J with ones on the diagonal and -1 in the given column off-diagonal.

    J @ f <= 0 is the event that entry ``index`` attains the maximum of f.
    """
    J = np.eye(size)
    J[:, index] -= 1.0
    J[index, index] = 1.0
    return J


def sample_posterior_function(
    post: GPPosterior, m: int, rng: np.random.Generator
) -> FeatureFunctionSample:
    """Draw an approximate posterior function with m random features.

    The weight posterior is sampled through the data-space decomposition
    theta = theta0 + Phi^T (Phi Phi^T + noise I)^{-1} (y - Phi theta0 - eps0),
    which stays well conditioned as the noise variance vanishes.
    """
    if m < 1:
        raise ValueError("feature count must be at least 1")
    hp = post.hyperparams
    d = hp.dim
    W = rng.standard_normal((m, d)) / hp.lengthscales
    b = rng.uniform(0.0, 2.0 * np.pi, size=m)
    amplitude = np.sqrt(2.0 * hp.signal_variance / m)
    theta0 = rng.standard_normal(m)
    if post.n_train == 0:
        return FeatureFunctionSample(W, b, theta0, amplitude)
    Phi = amplitude * np.cos(post.X @ W.T + b)  # (n, m)
    noise = max(hp.noise_variance, 1e-10)
    G = Phi @ Phi.T + noise * np.eye(post.n_train)
    L, _ = chol_with_jitter(G, hp.signal_variance)
    eps0 = rng.standard_normal(post.n_train) * np.sqrt(noise)
    resid = post.y - Phi @ theta0 - eps0
    from scipy.linalg import cho_solve

    theta = theta0 + Phi.T @ cho_solve((L, True), resid)
    return FeatureFunctionSample(W, b, theta, amplitude)


def maximize_sampled_function(
    sample: FeatureFunctionSample,
    domain: Domain,
    restarts: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Gradient ascent on a sampled function from uniform random starts."""
    if restarts < 1:
        raise ValueError("restarts must be at least 1")

    def neg(x):
        return -float(sample(x[None, :])[0]), -sample.grad(x)

    bounds = list(zip(domain.lower, domain.upper))
    best_x, best_val = None, np.inf
    for x0 in domain.sample_uniform(restarts, rng):
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        if res.fun < best_val:
            best_val = res.fun
            best_x = res.x
    return domain.clip(best_x)


def trusted_probs(
    post: GPPosterior,
    points: np.ndarray,
    mc_samples: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo argmax probabilities over a finite candidate set.

    One shared pass of joint latent draws serves every candidate: each draw
    is assigned to its argmax (ties broken by lowest index) and the count
    fractions estimate the orthant probabilities. Returns the estimates and
    their standard errors.
    """
    points = np.atleast_2d(points)
    k = points.shape[0]
    if k == 1:
        return np.ones(1), np.zeros(1)
    mean, cov = post.predict(points)
    L, _ = chol_with_jitter(cov, post.hyperparams.signal_variance)
    draws = mean + rng.standard_normal((mc_samples, k)) @ L.T
    winners = np.argmax(draws, axis=1)
    counts = np.bincount(winners, minlength=k)
    probs = counts / mc_samples
    stderr = np.sqrt(probs * (1.0 - probs) / mc_samples)
    return probs, stderr


def trusted_prob(
    post: GPPosterior,
    points: np.ndarray,
    index: int,
    mc_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Probability that points[index] maximizes the latent function over the set."""
    probs, stderr = trusted_probs(post, points, mc_samples, rng)
    return float(probs[index]), float(stderr[index])


def build_trusted_set(
    post: GPPosterior,
    n: int,
    domain: Domain,
    rng: np.random.Generator,
    n_features: int = 1024,
    maximize_restarts: int = 5,
    mc_samples: int = 10_000,
    dedup_radius: float | None = None,
) -> TrustedSet:
    """Draw n posterior function samples, maximize each, deduplicate, and weight.

    Duplicate maximizers within the dedup radius are merged, keeping the
    point whose own sampled function value is highest; duplicates would
    otherwise make the joint Gram matrix over the set singular.
    """
    if n < 1:
        raise ValueError("target size must be at least 1")
    if dedup_radius is None:
        dedup_radius = 1e-3 * float(np.min(domain.width))
    candidates = []
    for _ in range(n):
        s = sample_posterior_function(post, n_features, rng)
        x = maximize_sampled_function(s, domain, maximize_restarts, rng)
        candidates.append((x, float(s(x[None, :])[0])))
    candidates.sort(key=lambda c: -c[1])
    kept: list[np.ndarray] = []
    for x, _ in candidates:
        if all(np.linalg.norm(x - p) >= dedup_radius for p in kept):
            kept.append(x)
    points = np.array(kept)
    probs, stderr = trusted_probs(post, points, mc_samples, rng)
    return TrustedSet(points=points, probabilities=probs, prob_stderr=stderr)
