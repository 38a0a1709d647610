"""Gaussian-process regression with the squared-exponential kernel.

Provides posterior prediction, marginal-likelihood based hyperparameter
learning, and prediction conditioned jointly on noisy observations and
hypothetical noiseless function values at a set of anchor inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize


class NumericalError(RuntimeError):
    """Raised when a Gram matrix stays non-positive-definite after jitter escalation."""


@dataclass(frozen=True)
class KernelHyperparams:
    """SE-kernel hyperparameters: signal variance, per-dimension lengthscales, noise variance."""

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if np.any(ls <= 0):
            raise ValueError("all lengthscales must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    def to_log_vector(self) -> np.ndarray:
        return np.log(
            np.concatenate([[self.signal_variance], self.lengthscales, [self.noise_variance]])
        )

    @staticmethod
    def from_log_vector(v: np.ndarray) -> "KernelHyperparams":
        v = np.asarray(v, dtype=float)
        return KernelHyperparams(
            signal_variance=float(np.exp(v[0])),
            lengthscales=np.exp(v[1:-1]),
            noise_variance=float(np.exp(v[-1])),
        )


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box domain."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same shape")
        if np.any(lo >= hi):
            raise ValueError("lower bounds must be strictly below upper bounds")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray, atol: float = 1e-9) -> bool:
        x = np.atleast_2d(x)
        return bool(
            np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol)
        )

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


def se_kernel_matrix(X1: np.ndarray, X2: np.ndarray, hp: KernelHyperparams) -> np.ndarray:
    """SE kernel Gram matrix between two input sets.

    k(x, x') = signal_variance * exp(-0.5 * sum_i ((x_i - x'_i) / l_i)^2)
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != hp.dim or X2.shape[1] != hp.dim:
        raise ValueError(
            f"input dimension {X1.shape[1]}/{X2.shape[1]} does not match "
            f"hyperparameter dimension {hp.dim}"
        )
    A = X1 / hp.lengthscales
    B = X2 / hp.lengthscales
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.maximum(sq, 0.0, out=sq)
    return hp.signal_variance * np.exp(-0.5 * sq)


def se_kernel(x: np.ndarray, x2: np.ndarray, hp: KernelHyperparams) -> float:
    """Scalar SE kernel evaluation; symmetric in its first two arguments."""
    return float(se_kernel_matrix(np.atleast_2d(x), np.atleast_2d(x2), hp)[0, 0])


def chol_with_jitter(M: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``M``, escalating diagonal jitter on failure.

    Tries jitter 0, then 1e-10 * scale, multiplying by 10 up to 1e-4 * scale.
    Returns the factor and the jitter actually used.
    """
    jitters = [0.0] + [scale * 1e-10 * (10.0**k) for k in range(7)]
    n = M.shape[0]
    for jitter in jitters:
        try:
            L = np.linalg.cholesky(M + jitter * np.eye(n))
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"matrix not positive definite even with jitter {jitters[-1]:.3g}"
    )


@dataclass(frozen=True)
class GPPosterior:
    """Immutable fitted GP posterior with cached Cholesky factor and weight vector.

    A zero prior mean is assumed throughout. An empty training set yields
    the prior.
    """

    X: np.ndarray
    y: np.ndarray
    hyperparams: KernelHyperparams
    chol: np.ndarray | None = field(repr=False, default=None)
    weights: np.ndarray | None = field(repr=False, default=None)

    @property
    def n_train(self) -> int:
        return self.X.shape[0]

    def predict(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Joint latent predictive mean and full covariance at the queries.

        Adding noise_variance to the diagonal of the returned covariance
        gives the observation predictive.
        """
        Xq = np.atleast_2d(np.asarray(queries, dtype=float))
        hp = self.hyperparams
        Kqq = se_kernel_matrix(Xq, Xq, hp)
        if self.n_train == 0:
            return np.zeros(Xq.shape[0]), Kqq
        KqD = se_kernel_matrix(Xq, self.X, hp)
        mean = KqD @ self.weights
        V = solve_triangular(self.chol, KqD.T, lower=True)
        cov = Kqq - V.T @ V
        return mean, cov

    def predict_mean_grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the posterior mean at a single query point."""
        x = np.asarray(x, dtype=float)
        hp = self.hyperparams
        if self.n_train == 0:
            return np.zeros_like(x)
        k = se_kernel_matrix(x[None, :], self.X, hp)[0]
        diff = (self.X - x) / hp.lengthscales**2
        return (k * self.weights) @ diff


def fit_posterior(X: np.ndarray, y: np.ndarray, hp: KernelHyperparams) -> GPPosterior:
    """Fit a GP posterior, caching the Cholesky factor of K_DD + noise * I."""
    X = np.atleast_2d(np.asarray(X, dtype=float)) if np.size(X) else np.zeros((0, hp.dim))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError("inputs and observations have mismatched lengths")
    if X.shape[0] == 0:
        return GPPosterior(X=X, y=y, hyperparams=hp)
    K = se_kernel_matrix(X, X, hp) + hp.noise_variance * np.eye(X.shape[0])
    L, _ = chol_with_jitter(K, hp.signal_variance)
    w = cho_solve((L, True), y)
    return GPPosterior(X=X, y=y, hyperparams=hp, chol=L, weights=w)


class AugmentedConditioner:
    """Prediction conditioned jointly on noisy data and noiseless anchor values.

    Stacks anchors t = [X_star; D] and factorizes K_tt + noise * I_masked
    once, where the masked identity carries ones only on the D block, so
    the X_star block is treated as noiseless function values.
    """

    def __init__(self, post: GPPosterior, anchor_points: np.ndarray):
        self.post = post
        hp = post.hyperparams
        Xs = np.atleast_2d(np.asarray(anchor_points, dtype=float))
        if Xs.size == 0:
            Xs = np.zeros((0, hp.dim))
        self.anchor_points = Xs
        self.n_anchor = Xs.shape[0]
        self.t = np.vstack([Xs, post.X]) if post.n_train else Xs
        mask = np.zeros(self.t.shape[0])
        mask[self.n_anchor:] = 1.0
        K = se_kernel_matrix(self.t, self.t, hp) + hp.noise_variance * np.diag(mask)
        self.chol, self.jitter = chol_with_jitter(K, hp.signal_variance)

    def project(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Linear-in-anchor-values representation of the conditional predictive.

        Returns (A, b, cov_base): the conditional latent mean at the queries
        is A @ f_anchor + b for any anchor values f_anchor, and cov_base is
        the conditional latent covariance (independent of f_anchor).
        """
        Xq = np.atleast_2d(np.asarray(queries, dtype=float))
        hp = self.post.hyperparams
        Kqt = se_kernel_matrix(Xq, self.t, hp)
        R = cho_solve((self.chol, True), Kqt.T)  # (n_t, q)
        A = R[: self.n_anchor].T
        b = R[self.n_anchor:].T @ self.post.y if self.post.n_train else np.zeros(Xq.shape[0])
        cov_base = se_kernel_matrix(Xq, Xq, hp) - Kqt @ R
        return A, b, cov_base

    def predict(self, anchor_values: np.ndarray, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Latent conditional mean and covariance given anchor function values."""
        A, b, cov_base = self.project(queries)
        f = np.asarray(anchor_values, dtype=float).ravel()
        return A @ f + b, cov_base


def predict_given_function_values(
    post: GPPosterior,
    anchor_points: np.ndarray,
    anchor_values: np.ndarray,
    queries: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One-shot wrapper around :class:`AugmentedConditioner`."""
    return AugmentedConditioner(post, anchor_points).predict(anchor_values, queries)


def log_marginal_likelihood(
    X: np.ndarray, y: np.ndarray, hp: KernelHyperparams
) -> tuple[float, np.ndarray]:
    """GP log marginal likelihood and its gradient over log-hyperparameters.

    Gradient ordering: [log signal_variance, log l_1..d, log noise_variance].
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n == 0:
        raise ValueError("log marginal likelihood needs a nonempty dataset")
    Kf = se_kernel_matrix(X, X, hp)
    K = Kf + hp.noise_variance * np.eye(n)
    L, _ = chol_with_jitter(K, hp.signal_variance)
    alpha = cho_solve((L, True), y)
    value = (
        -0.5 * y @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )

    # dlml/dtheta = 0.5 tr((alpha alpha^T - K^{-1}) dK/dtheta)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty(d + 2)
    grad[0] = 0.5 * np.sum(W * Kf)  # dK/dlog sigma_s^2 = Kf
    for i in range(d):
        diff2 = (X[:, i][:, None] - X[:, i][None, :]) ** 2
        grad[1 + i] = 0.5 * np.sum(W * (Kf * diff2 / hp.lengthscales[i] ** 2))
    grad[d + 1] = 0.5 * hp.noise_variance * np.trace(W)
    return float(value), grad


def fit_hyperparams(
    X: np.ndarray,
    y: np.ndarray,
    domain: Domain,
    n_restarts: int = 10,
    rng: np.random.Generator | None = None,
    noise_floor: float = 1e-8,
) -> KernelHyperparams:
    """Maximum-likelihood hyperparameters via multi-start L-BFGS in log space.

    Box bounds: lengthscales in [1e-3, 1e3] times the domain width per
    dimension, noise variance in [noise_floor, var(y)], signal variance in
    [1e-6, 1e3] times var(y). Deterministic given the generator.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 2:
        raise ValueError("hyperparameter fitting needs at least 2 points")
    d = X.shape[1]
    y_var = max(float(np.var(y)), 1e-8)
    lo = np.concatenate([[np.log(1e-6 * y_var)], np.log(1e-3 * domain.width), [np.log(noise_floor)]])
    hi = np.concatenate([[np.log(1e3 * y_var)], np.log(1e3 * domain.width), [np.log(max(y_var, 10 * noise_floor))]])
    bounds = list(zip(lo, hi))

    def neg_lml(v):
        hp = KernelHyperparams.from_log_vector(v)
        try:
            val, grad = log_marginal_likelihood(X, y, hp)
        except NumericalError:
            return 1e12, np.zeros_like(v)
        return -val, -grad

    best_val = np.inf
    best_v = None
    failures = []
    for k in range(n_restarts):
        if k == 0:
            v0 = np.concatenate([[np.log(y_var)], np.log(np.median(domain.width)) * np.ones(d), [np.log(max(1e-2 * y_var, noise_floor))]])
            v0 = np.clip(v0, lo, hi)
        else:
            v0 = rng.uniform(lo, hi)
        res = minimize(neg_lml, v0, jac=True, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val = res.fun
            best_v = res.x
        elif not np.isfinite(res.fun):
            failures.append((k, res.message))
    if best_v is None:
        raise NumericalError(f"all hyperparameter starts failed: {failures}")
    return KernelHyperparams.from_log_vector(best_v)
