"""Deterministic approximation of the trusted-maximizers acquisition.

The conditional belief over latent values at the trusted set, given which
point is the maximizer, is approximated by a Gaussian fitted with
expectation propagation over the pairwise inequality constraints. The
observation predictive then has a closed Gaussian form per maximizer and the
acquisition reduces to entropies of a small Gaussian mixture, resolved by
Gauss-Hermite quadrature (single query) or reparameterized Monte Carlo
(batch).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.special import erfcx
from scipy.stats import norm

from .autodiff import DTYPE, TorchConditioner, jittered_cholesky, to_tensor
from .gp import AugmentedConditioner, GPPosterior, chol_with_jitter
from .sampling import TrustedSet

_SITE_VAR_FLOOR = 1e-10
_GH_ORDER = 64
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(_GH_ORDER)


class EPDivergenceError(RuntimeError):
    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


def phi_over_cdf(beta: float) -> float:
    """phi(beta) / Phi(beta), switching to an erfcx form deep in the lower tail."""
    if beta > -6.0:
        return norm.pdf(beta) / norm.cdf(beta)
    return np.sqrt(2.0 / np.pi) / erfcx(-beta / np.sqrt(2.0))


@dataclass
class EPApprox:
    """Gaussian approximation of the maximizer-conditioned joint belief."""

    mean: np.ndarray  # (k,)
    cov: np.ndarray  # (k, k)
    owner: int
    site_precision: np.ndarray  # (k,), zero at the owner slot
    site_shift: np.ndarray  # (k,), natural mean parameter, zero at the owner slot
    iterations: int
    converged: bool
    skipped_updates: int = 0

    def site_params(self, index: int) -> tuple[float, float]:
        """Moment-form site parameters (mean, variance) for one constraint."""
        p = self.site_precision[index]
        return self.site_shift[index] / p, 1.0 / p


def ep_gaussian(
    mean: np.ndarray,
    cov: np.ndarray,
    owner: int,
    max_iters: int = 50,
    tol: float = 1e-6,
    damping: float = 0.8,
) -> EPApprox:
    """EP moment matching for a Gaussian conditioned on one entry being maximal.

    One site per other entry, constraint c^T f >= 0 with c carrying +1 at the
    owner and -1 at that entry. Sites sweep in fixed index order; updates are
    damped and site variances clipped at a small positive floor. A cavity
    with nonpositive variance skips that site for the sweep.
    """
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.asarray(cov, dtype=float)
    k = mean.shape[0]
    if k == 1:
        return EPApprox(mean.copy(), cov.copy(), owner, np.zeros(1), np.zeros(1),
                        iterations=0, converged=True)

    scale = float(np.max(np.diag(cov)))
    Lk, _ = chol_with_jitter(cov, scale)
    from scipy.linalg import cho_solve

    K_inv = cho_solve((Lk, True), np.eye(k))
    eta0 = cho_solve((Lk, True), mean)

    others = [i for i in range(k) if i != owner]
    prec = np.zeros(k)
    shift = np.zeros(k)

    def constraint(i):
        c = np.zeros(k)
        c[owner] = 1.0
        c[i] = -1.0
        return c

    C = np.stack([constraint(i) for i in others], axis=1)  # (k, n_sites)

    def global_update():
        P = K_inv + C @ (prec[others][:, None] * C.T)
        Lp, _ = chol_with_jitter(P, max(np.max(np.abs(P)), 1.0))
        Sigma = cho_solve((Lp, True), np.eye(k))
        mu = cho_solve((Lp, True), eta0 + C @ shift[others])
        return mu, Sigma

    mu, Sigma = global_update()
    skipped = 0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        max_delta = 0.0
        for i in others:
            c = constraint(i)
            s = float(c @ Sigma @ c)
            m = float(c @ mu)
            cav_prec = 1.0 / s - prec[i]
            if cav_prec <= 0 or not np.isfinite(cav_prec):
                skipped += 1
                continue
            tau_cav = 1.0 / cav_prec
            mu_cav = tau_cav * (m / s - shift[i])
            beta = mu_cav / np.sqrt(tau_cav)
            r = phi_over_cdf(beta)
            mu_hat = np.sqrt(tau_cav) * r + mu_cav
            tau_hat = tau_cav * (1.0 - r * (r + beta))
            tau_hat = max(tau_hat, _SITE_VAR_FLOOR * tau_cav)
            prec_prop = 1.0 / tau_hat - 1.0 / tau_cav
            shift_prop = mu_hat / tau_hat - mu_cav / tau_cav
            if not (np.isfinite(prec_prop) and np.isfinite(shift_prop)):
                raise EPDivergenceError(
                    f"non-finite site proposal at site {i}",
                    last_state=EPApprox(mu, Sigma, owner, prec.copy(), shift.copy(),
                                        iterations=it, converged=False, skipped_updates=skipped),
                )
            prec_prop = min(max(prec_prop, _SITE_VAR_FLOOR), 1.0 / _SITE_VAR_FLOOR)
            new_prec = damping * prec_prop + (1.0 - damping) * prec[i]
            new_shift = damping * shift_prop + (1.0 - damping) * shift[i]
            max_delta = max(max_delta, abs(new_prec - prec[i]), abs(new_shift - shift[i]))
            prec[i] = new_prec
            shift[i] = new_shift
            mu, Sigma = global_update()
        if max_delta < tol:
            converged = True
            break
    Sigma = 0.5 * (Sigma + Sigma.T)
    return EPApprox(mean=mu, cov=Sigma, owner=owner, site_precision=prec,
                    site_shift=shift, iterations=it, converged=converged,
                    skipped_updates=skipped)


def ep_approximate(
    post: GPPosterior,
    trusted: TrustedSet,
    owner: int,
    max_iters: int = 50,
    tol: float = 1e-6,
    damping: float = 0.8,
) -> EPApprox:
    """EP approximation of the joint latent belief at the trusted set,
    conditioned on ``owner`` being its maximizer."""
    mean, cov = post.predict(trusted.points)
    return ep_gaussian(mean, cov, owner, max_iters=max_iters, tol=tol, damping=damping)


@dataclass(frozen=True)
class PredictiveProjection:
    """Linear projection of trusted-set values onto the query predictive.

    The conditional latent mean at the queries is coeff @ f + offset for any
    trusted-set values f; base_cov is the conditional latent covariance.
    """

    coeff: np.ndarray  # (q, k)
    offset: np.ndarray  # (q,)
    base_cov: np.ndarray  # (q, q)


def predictive_projection(
    post: GPPosterior, trusted: TrustedSet, query: np.ndarray
) -> PredictiveProjection:
    A, b, cov_base = AugmentedConditioner(post, trusted.points).project(query)
    return PredictiveProjection(coeff=A, offset=b, base_cov=cov_base)


def q_ep_predictive(
    ep: EPApprox, proj: PredictiveProjection, noise_variance: float
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian observation predictive at the query/batch for one maximizer."""
    mean = proj.coeff @ ep.mean + proj.offset
    cov = (
        proj.base_cov
        + proj.coeff @ ep.cov @ proj.coeff.T
        + noise_variance * np.eye(proj.coeff.shape[0])
    )
    return mean, cov


@dataclass
class TesEpState:
    """Per-iteration acquisition state for the EP path.

    Holds one EP approximation per trusted point, computed once per BO
    iteration; immutable during acquisition optimization.
    """

    post: GPPosterior
    trusted: TrustedSet
    approximations: list[EPApprox]
    conditioner: TorchConditioner = field(repr=False, default=None)
    _mu: torch.Tensor = field(repr=False, default=None)  # (k, k)
    _Sigma: torch.Tensor = field(repr=False, default=None)  # (k, k, k)
    _logp: torch.Tensor = field(repr=False, default=None)

    def __post_init__(self):
        if self.conditioner is None:
            self.conditioner = TorchConditioner(self.post, self.trusted.points)
        self._mu = torch.stack([to_tensor(ep.mean) for ep in self.approximations])
        self._Sigma = torch.stack([to_tensor(ep.cov) for ep in self.approximations])
        p = self.trusted.probabilities / self.trusted.probabilities.sum()
        self._logp = torch.log(to_tensor(p))

    @property
    def size(self) -> int:
        return self.trusted.size


def prepare_ep_state(
    post: GPPosterior,
    trusted: TrustedSet,
    max_iters: int = 50,
    tol: float = 1e-6,
    damping: float = 0.8,
    min_probability: float = 1e-12,
) -> TesEpState:
    """Build EP approximations for every trusted point with nonzero weight."""
    keep = trusted.probabilities > min_probability
    if not np.all(keep):
        pts = trusted.points[keep]
        pr = trusted.probabilities[keep]
        trusted = TrustedSet(points=pts, probabilities=pr / pr.sum())
    eps = [
        ep_approximate(post, trusted, j, max_iters=max_iters, tol=tol, damping=damping)
        for j in range(trusted.size)
    ]
    return TesEpState(post=post, trusted=trusted, approximations=eps)


def _component_predictives(
    state: TesEpState, Xq: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Means (k, q) and covariances (k, q, q) of the per-maximizer predictives."""
    A, b, cov_base = state.conditioner.project(Xq)
    noise = state.post.hyperparams.noise_variance
    q = Xq.shape[0]
    means = state._mu @ A.T + b  # (k, q)
    covs = cov_base + A @ state._Sigma @ A.T + noise * torch.eye(q, dtype=DTYPE)
    return means, covs


def _alpha_ep_single(state: TesEpState, Xq: torch.Tensor) -> torch.Tensor:
    """Gauss-Hermite evaluation for a single query point; deterministic."""
    means, covs = _component_predictives(state, Xq)
    mu = means[:, 0]  # (k,)
    var = covs[:, 0, 0]  # (k,)
    nodes = to_tensor(_GH_NODES)
    weights = to_tensor(_GH_WEIGHTS)
    # y_{j,i} = mu_j + sqrt(2 var_j) t_i
    y = mu[:, None] + torch.sqrt(2.0 * var)[:, None] * nodes[None, :]  # (k, n)
    # log mixture density at every node of every component
    diff = y[:, None, :] - mu[None, :, None]  # (k_draws, k_comp, n)
    log_comp = -0.5 * (
        diff**2 / var[None, :, None]
        + torch.log(2.0 * np.pi * var)[None, :, None]
    )
    log_mix = torch.logsumexp(log_comp + state._logp[None, :, None], dim=1)  # (k, n)
    cross = (log_mix * weights[None, :]).sum(dim=1) / np.sqrt(np.pi)  # (k,)
    neg_entropy = -0.5 * torch.log(2.0 * np.pi * np.e * var)
    p = torch.exp(state._logp)
    return (p * (neg_entropy - cross)).sum()


def _alpha_ep_batch(
    state: TesEpState, Xq: torch.Tensor, noises: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Reparameterized Monte Carlo evaluation for a batch query.

    ``noises`` has shape (k, n, q): base draws per component.
    """
    q = Xq.shape[0]
    hp = state.post.hyperparams
    means, covs = _component_predictives(state, Xq)
    chols = torch.stack(
        [jittered_cholesky(covs[j], hp.signal_variance) for j in range(state.size)]
    )
    logdets = 2.0 * torch.log(torch.diagonal(chols, dim1=1, dim2=2)).sum(dim=1)  # (k,)
    neg_entropy = -0.5 * (logdets + q * np.log(2.0 * np.pi * np.e))

    p = torch.exp(state._logp)
    est = torch.zeros((), dtype=DTYPE)
    var_acc = torch.zeros((), dtype=DTYPE)
    for j in range(state.size):
        Yj = means[j] + noises[j] @ chols[j].T  # (n, q)
        # log density of each draw under every component
        diff = Yj[:, None, :] - means[None, :, :]  # (n, k, q)
        z = torch.linalg.solve_triangular(
            chols, diff.permute(1, 2, 0), upper=False
        )  # (k, q, n)
        quad = (z**2).sum(dim=1).T  # (n, k)
        log_comp = -0.5 * (quad + logdets[None, :] + q * np.log(2.0 * np.pi))
        log_mix = torch.logsumexp(log_comp + state._logp[None, :], dim=1)  # (n,)
        contrib = neg_entropy[j] - log_mix
        est = est + p[j] * contrib.mean()
        if contrib.shape[0] > 1:
            var_acc = var_acc + p[j] ** 2 * contrib.var() / contrib.shape[0]
    return est, torch.sqrt(var_acc)


def alpha_ep(
    state: TesEpState,
    query: np.ndarray,
    rng: np.random.Generator | None = None,
    n_y: int = 1000,
) -> tuple[float, float]:
    """Acquisition estimate and standard error at a point or batch query.

    Single-point queries use quadrature and have zero standard error; batch
    queries need a generator for the Monte Carlo cross-entropy term.
    """
    Xq = np.atleast_2d(np.asarray(query, dtype=float))
    if state.size == 1:
        return 0.0, 0.0
    with torch.no_grad():
        if Xq.shape[0] == 1:
            return float(_alpha_ep_single(state, to_tensor(Xq))), 0.0
        if rng is None:
            raise ValueError("batch queries need a random generator")
        n_per = max(1, n_y // state.size)
        noises = to_tensor(rng.standard_normal((state.size, n_per, Xq.shape[0])))
        est, stderr = _alpha_ep_batch(state, to_tensor(Xq), noises)
    return float(est), float(stderr)


def alpha_ep_value_and_grad(
    state: TesEpState,
    query: np.ndarray,
    rng: np.random.Generator | None = None,
    n_y: int = 1000,
) -> tuple[float, np.ndarray, float]:
    """Value, query gradient, and standard error.

    The gradient passes through the reparameterized draws (batch) or the
    quadrature nodes (single query), so fixing the generator's draws gives a
    deterministic, differentiable function of the query.
    """
    Xq = np.atleast_2d(np.asarray(query, dtype=float))
    if state.size == 1:
        return 0.0, np.zeros_like(Xq), 0.0
    Xt = to_tensor(Xq).requires_grad_(True)
    if Xq.shape[0] == 1:
        est = _alpha_ep_single(state, Xt)
        stderr = torch.zeros(())
    else:
        if rng is None:
            raise ValueError("batch queries need a random generator")
        n_per = max(1, n_y // state.size)
        noises = to_tensor(rng.standard_normal((state.size, n_per, Xq.shape[0])))
        est, stderr = _alpha_ep_batch(state, Xt, noises)
    (grad,) = torch.autograd.grad(est, Xt)
    return float(est.detach()), grad.numpy(), float(stderr.detach())
