"""Torch backend for query-differentiable acquisition evaluation.

The per-iteration state (trusted set, sample sets, EP moments, Gram
factorizations) is precomputed with numpy and frozen into tensors; only the
query-dependent kernel vectors and densities are traced, so value-and-gradient
pairs come out of autograd with the reparameterization intact.
"""

from __future__ import annotations

import numpy as np
import torch

from .gp import GPPosterior, KernelHyperparams, chol_with_jitter, se_kernel_matrix

DTYPE = torch.float64


def to_tensor(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a, dtype=float), dtype=DTYPE)


def se_kernel_torch(X1: torch.Tensor, X2: torch.Tensor, hp: KernelHyperparams) -> torch.Tensor:
    ls = to_tensor(hp.lengthscales)
    A = X1 / ls
    B = X2 / ls
    sq = (A**2).sum(-1)[:, None] + (B**2).sum(-1)[None, :] - 2.0 * A @ B.T
    return hp.signal_variance * torch.exp(-0.5 * sq.clamp_min(0.0))


class TorchConditioner:
    """Differentiable projection of queries onto the stacked anchor system.

    Mirrors :class:`tesbo.gp.AugmentedConditioner`: anchors are the trusted
    points followed by the training inputs, with observation noise applied
    only to the training block. The Cholesky factor of the stacked Gram
    matrix is computed once in numpy and frozen.
    """

    def __init__(self, post: GPPosterior, anchor_points: np.ndarray):
        self.post = post
        self.hp = post.hyperparams
        Xs = np.atleast_2d(np.asarray(anchor_points, dtype=float))
        self.n_anchor = Xs.shape[0]
        t = np.vstack([Xs, post.X]) if post.n_train else Xs
        mask = np.zeros(t.shape[0])
        mask[self.n_anchor:] = 1.0
        K = se_kernel_matrix(t, t, self.hp) + self.hp.noise_variance * np.diag(mask)
        L, _ = chol_with_jitter(K, self.hp.signal_variance)
        self.t = to_tensor(t)
        self.chol = to_tensor(L)
        self.y = to_tensor(post.y)

    def project(self, Xq: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (A, b, cov_base) such that the conditional latent mean at
        the queries is A @ f_anchor + b and cov_base is the conditional
        latent covariance."""
        Kqt = se_kernel_torch(Xq, self.t, self.hp)
        R = torch.cholesky_solve(Kqt.T, self.chol)  # (n_t, q)
        A = R[: self.n_anchor].T
        if self.post.n_train:
            b = R[self.n_anchor:].T @ self.y
        else:
            b = torch.zeros(Xq.shape[0], dtype=DTYPE)
        Kqq = se_kernel_torch(Xq, Xq, self.hp)
        cov_base = Kqq - Kqt @ R
        return A, b, cov_base


def mvn_log_density_shared_chol(
    y: torch.Tensor, means: torch.Tensor, chol: torch.Tensor
) -> torch.Tensor:
    """Log N(y_i; means_j, C) for all pairs, with one shared covariance factor.

    y: (n, q), means: (c, q), chol: (q, q) lower. Returns (n, c).
    """
    q = y.shape[-1]
    diff = y[:, None, :] - means[None, :, :]  # (n, c, q)
    z = torch.linalg.solve_triangular(
        chol, diff.reshape(-1, q).T, upper=False
    )  # (q, n*c)
    quad = (z**2).sum(0).reshape(diff.shape[0], diff.shape[1])
    logdet = 2.0 * torch.log(torch.diagonal(chol)).sum()
    return -0.5 * (quad + logdet + q * np.log(2.0 * np.pi))


def jittered_cholesky(C: torch.Tensor, scale: float) -> torch.Tensor:
    """Torch Cholesky with the same escalation schedule as the numpy core."""
    q = C.shape[0]
    eye = torch.eye(q, dtype=DTYPE)
    for jitter in [0.0] + [scale * 1e-10 * (10.0**k) for k in range(7)]:
        try:
            return torch.linalg.cholesky(C + jitter * eye)
        except torch.linalg.LinAlgError:
            continue
    raise torch.linalg.LinAlgError("covariance not positive definite after jitter escalation")
