"""Stochastic approximation of the trusted-maximizers acquisition.

The conditional belief over latent values at the trusted set, given which
point is the maximizer, is represented by weighted samples (rejection,
importance, or grouped sampling). The observation predictive becomes a
mixture of Gaussians over those samples and the acquisition is estimated by
nested Monte Carlo with reparameterized draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.special import log_ndtr, logsumexp
from scipy.stats import truncnorm

from .autodiff import (
    DTYPE,
    TorchConditioner,
    jittered_cholesky,
    mvn_log_density_shared_chol,
    to_tensor,
)
from .gp import GPPosterior, chol_with_jitter
from .sampling import TrustedSet


class SamplingError(RuntimeError):
    pass


@dataclass
class ConditionedSampleSet:
    """Weighted joint-value samples consistent with one point being the maximizer."""

    owner: int
    samples: np.ndarray  # (n, k)
    weights: np.ndarray  # (n,)
    warning: str | None = None
    # Log-scale weights survive underflow of the linear-scale ones; when
    # absent they are recovered from `weights`.
    log_weights: np.ndarray | None = None

    @property
    def normalized_log_weights(self) -> np.ndarray:
        lw = self.log_weights
        if lw is None:
            with np.errstate(divide="ignore"):
                lw = np.log(self.weights)
        return lw - logsumexp(lw)

    @property
    def normalized_weights(self) -> np.ndarray:
        return np.exp(self.normalized_log_weights)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Weighted mean and covariance of the sample set."""
        w = self.normalized_weights
        mean = w @ self.samples
        diff = self.samples - mean
        cov = (diff * w[:, None]).T @ diff / (1.0 - np.sum(w**2))
        return mean, cov


def joint_predictive_chol(post: GPPosterior, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean, cov = post.predict(points)
    L, _ = chol_with_jitter(cov, post.hyperparams.signal_variance)
    return mean, L


def rejection_sample_gaussian(
    mean: np.ndarray,
    chol: np.ndarray,
    owner: int,
    n: int,
    max_draws: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Accept joint Gaussian draws whose argmax falls on the owner index."""
    k = mean.shape[0]
    accepted = []
    drawn = 0
    batch = max(n, 1024)
    while drawn < max_draws and sum(a.shape[0] for a in accepted) < n:
        b = min(batch, max_draws - drawn)
        draws = mean + rng.standard_normal((b, k)) @ chol.T
        drawn += b
        mask = np.argmax(draws, axis=1) == owner
        accepted.append(draws[mask])
    out = np.concatenate(accepted, axis=0)
    if out.shape[0] < n:
        raise SamplingError(
            f"only {out.shape[0]}/{n} draws accepted within {max_draws}; "
            "the conditioning event is rare, use importance sampling instead"
        )
    return out[:n]


def rejection_sample(
    post: GPPosterior,
    trusted: TrustedSet,
    owner: int,
    n: int,
    rng: np.random.Generator,
    max_draws: int = 1_000_000,
) -> ConditionedSampleSet:
    mean, L = joint_predictive_chol(post, trusted.points)
    if trusted.size == 1:
        samples = mean + rng.standard_normal((n, 1)) @ L.T
    else:
        samples = rejection_sample_gaussian(mean, L, owner, n, max_draws, rng)
    return ConditionedSampleSet(owner=owner, samples=samples, weights=np.ones(n))


def importance_sample(
    post: GPPosterior,
    trusted: TrustedSet,
    owner: int,
    n: int,
    rng: np.random.Generator,
) -> ConditionedSampleSet:
    """Two-step proposal: joint draw over the other points, then a
    lower-truncated conditional draw at the owner; each sample is weighted
    by the untruncated upper-tail mass above the running maximum."""
    if trusted.size < 2:
        raise ValueError("importance sampling needs at least 2 trusted points")
    mean, cov = post.predict(trusted.points)
    k = trusted.size
    rest = [i for i in range(k) if i != owner]
    mean_r, cov_rr = mean[rest], cov[np.ix_(rest, rest)]
    cov_or = cov[owner, rest]
    L_r, _ = chol_with_jitter(cov_rr, post.hyperparams.signal_variance)
    f_rest = mean_r + rng.standard_normal((n, k - 1)) @ L_r.T

    from scipy.linalg import cho_solve

    s = cho_solve((L_r, True), cov_or)
    var_c = float(cov[owner, owner] - cov_or @ s)
    var_c = max(var_c, 1e-12 * post.hyperparams.signal_variance)
    sigma_c = np.sqrt(var_c)
    mu_c = mean[owner] + (f_rest - mean_r) @ s
    f_plus = np.max(f_rest, axis=1)
    a = (f_plus - mu_c) / sigma_c
    z = truncnorm.rvs(a, np.inf, size=n, random_state=rng)
    f_owner = mu_c + sigma_c * z
    log_weights = log_ndtr(-a)
    weights = np.exp(log_weights)

    samples = np.empty((n, k))
    samples[:, rest] = f_rest
    samples[:, owner] = f_owner
    ess = np.exp(2.0 * logsumexp(log_weights) - logsumexp(2.0 * log_weights))
    warning = None
    if ess < 0.01 * n:
        warning = f"effective sample size {ess:.1f} below 1% of {n}"
    return ConditionedSampleSet(
        owner=owner, samples=samples, weights=weights,
        warning=warning, log_weights=log_weights,
    )


def group_by_maximizer(
    post: GPPosterior,
    trusted: TrustedSet,
    total_draws: int,
    rng: np.random.Generator,
) -> tuple[dict[int, ConditionedSampleSet], TrustedSet]:
    """One joint-sampling pass assigning each draw to its argmax.

    Empty groups are dropped and the trusted set is rebuilt over the
    surviving points, with group fractions as the argmax probabilities.
    Owner indices in the returned sample sets refer to the updated set.
    """
    if total_draws < trusted.size:
        raise ValueError("total_draws must be at least the trusted set size")
    mean, L = joint_predictive_chol(post, trusted.points)
    draws = mean + rng.standard_normal((total_draws, trusted.size)) @ L.T
    winners = np.argmax(draws, axis=1)
    survivors = [i for i in range(trusted.size) if np.any(winners == i)]
    new_points = trusted.points[survivors]
    fractions = np.array([np.mean(winners == i) for i in survivors])
    fractions = fractions / fractions.sum()
    stderr = np.sqrt(fractions * (1 - fractions) / total_draws)
    updated = TrustedSet(points=new_points, probabilities=fractions, prob_stderr=stderr)
    sets = {}
    for new_idx, old_idx in enumerate(survivors):
        group = draws[winners == old_idx][:, survivors]
        sets[new_idx] = ConditionedSampleSet(
            owner=new_idx, samples=group, weights=np.ones(group.shape[0])
        )
    return sets, updated


@dataclass
class TesSpState:
    """Per-iteration acquisition state: posterior, trusted set, sample sets.

    Immutable during acquisition optimization; build once per BO iteration.
    """

    post: GPPosterior
    trusted: TrustedSet
    sample_sets: dict[int, ConditionedSampleSet]
    conditioner: TorchConditioner = field(repr=False, default=None)
    _F: list[torch.Tensor] = field(repr=False, default=None)  # per-owner sample matrices
    _logw: list[torch.Tensor] = field(repr=False, default=None)  # normalized log-weights
    _logp: torch.Tensor = field(repr=False, default=None)

    def __post_init__(self):
        if self.conditioner is None:
            self.conditioner = TorchConditioner(self.post, self.trusted.points)
        k = self.trusted.size
        if set(self.sample_sets) != set(range(k)):
            raise ValueError("sample sets must cover every trusted index")
        self._F = [to_tensor(self.sample_sets[j].samples) for j in range(k)]
        self._logw = [
            to_tensor(self.sample_sets[j].normalized_log_weights) for j in range(k)
        ]
        p = self.trusted.probabilities / self.trusted.probabilities.sum()
        self._logp = torch.log(to_tensor(p))

    @property
    def size(self) -> int:
        return self.trusted.size


def prepare_sp_state(
    post: GPPosterior,
    trusted: TrustedSet,
    rng: np.random.Generator,
    total_draws: int = 2000,
    min_group: int = 20,
) -> TesSpState:
    """Default state construction: grouped sampling, importance fallback.

    Groups that survive with fewer than ``min_group`` draws are replaced by
    an importance sample of that size so the per-owner mixtures stay
    resolvable.
    """
    sets, updated = group_by_maximizer(post, trusted, total_draws, rng)
    if updated.size >= 2:
        for j in range(updated.size):
            if sets[j].samples.shape[0] < min_group:
                repl = importance_sample(post, updated, j, min_group, rng)
                sets[j] = repl
    return TesSpState(post=post, trusted=updated, sample_sets=sets)


def _component_log_densities(
    state: TesSpState, Y: torch.Tensor, A: torch.Tensor, b: torch.Tensor, L: torch.Tensor
) -> torch.Tensor:
    """Per-owner mixture log densities log q(y | owner) for draws Y (n, q).

    Returns (n, k).
    """
    cols = []
    for j in range(state.size):
        means = state._F[j] @ A.T + b  # (S_j, q)
        lp = mvn_log_density_shared_chol(Y, means, L)  # (n, S_j)
        cols.append(torch.logsumexp(lp + state._logw[j], dim=1))
    return torch.stack(cols, dim=1)


def q_sp_log_density(
    state: TesSpState, queries: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Log predictive densities of observations under each conditional mixture.

    ``queries`` is a (q, d) point or batch; ``y`` holds observation vectors
    of shape (q,) or (n, q). Returns (per-owner log densities with shape
    (n, k), mixture log density with shape (n,)), squeezed when a single
    observation vector is given.
    """
    Xq = np.atleast_2d(np.asarray(queries, dtype=float))
    q = Xq.shape[0]
    Y = np.asarray(y, dtype=float)
    single = Y.ndim < 2
    Y = Y.reshape(-1, q)
    with torch.no_grad():
        Xt = to_tensor(Xq)
        A, b, cov_base = state.conditioner.project(Xt)
        C = cov_base + state.post.hyperparams.noise_variance * torch.eye(q, dtype=DTYPE)
        L = jittered_cholesky(C, state.post.hyperparams.signal_variance)
        lq = _component_log_densities(state, to_tensor(Y), A, b, L)
        lmix = torch.logsumexp(lq + state._logp, dim=1)
    lq_np, lmix_np = lq.numpy(), lmix.numpy()
    if single:
        return lq_np[0], lmix_np[0]
    return lq_np, lmix_np


def _alpha_sp_torch(
    state: TesSpState,
    Xq: torch.Tensor,
    comp_idx: list[np.ndarray],
    noises: list[torch.Tensor],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Reparameterized nested Monte Carlo estimate with fixed base draws."""
    q = Xq.shape[0]
    hp = state.post.hyperparams
    A, b, cov_base = state.conditioner.project(Xq)
    C = cov_base + hp.noise_variance * torch.eye(q, dtype=DTYPE)
    L = jittered_cholesky(C, hp.signal_variance)

    est = torch.zeros((), dtype=DTYPE)
    var = torch.zeros((), dtype=DTYPE)
    p = torch.exp(state._logp)
    for j in range(state.size):
        means = state._F[j][comp_idx[j]] @ A.T + b  # (n_j, q)
        Yj = means + noises[j] @ L.T
        lq = _component_log_densities(state, Yj, A, b, L)  # (n_j, k)
        contrib = lq[:, j] - torch.logsumexp(lq + state._logp, dim=1)
        est = est + p[j] * contrib.mean()
        if contrib.shape[0] > 1:
            var = var + p[j] ** 2 * contrib.var() / contrib.shape[0]
    return est, torch.sqrt(var)


def _draw_sp_bases(
    state: TesSpState, q: int, n_y: int, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[torch.Tensor]]:
    n_per = max(1, n_y // state.size)
    comp_idx, noises = [], []
    for j in range(state.size):
        w = state.sample_sets[j].normalized_weights
        comp_idx.append(rng.choice(w.shape[0], size=n_per, p=w))
        noises.append(to_tensor(rng.standard_normal((n_per, q))))
    return comp_idx, noises


def alpha_sp(
    state: TesSpState,
    query: np.ndarray,
    rng: np.random.Generator,
    n_y: int = 1000,
) -> tuple[float, float]:
    """Acquisition estimate and standard error at a point or batch query."""
    Xq = np.atleast_2d(np.asarray(query, dtype=float))
    if state.size == 1:
        return 0.0, 0.0
    comp_idx, noises = _draw_sp_bases(state, Xq.shape[0], n_y, rng)
    with torch.no_grad():
        est, stderr = _alpha_sp_torch(state, to_tensor(Xq), comp_idx, noises)
    return float(est), float(stderr)


def alpha_sp_value_and_grad(
    state: TesSpState,
    query: np.ndarray,
    rng: np.random.Generator,
    n_y: int = 1000,
) -> tuple[float, np.ndarray, float]:
    """Value, query gradient (reparameterized), and standard error."""
    Xq = np.atleast_2d(np.asarray(query, dtype=float))
    if state.size == 1:
        return 0.0, np.zeros_like(Xq), 0.0
    comp_idx, noises = _draw_sp_bases(state, Xq.shape[0], n_y, rng)
    Xt = to_tensor(Xq).requires_grad_(True)
    est, stderr = _alpha_sp_torch(state, Xt, comp_idx, noises)
    (grad,) = torch.autograd.grad(est, Xt)
    return float(est.detach()), grad.numpy(), float(stderr.detach())
