"""Closed-form denoiser for Gaussian-mixture data.

For data ``x ~ sum_k w_k N(m_k, S_k)`` the noisy latent ``z = alpha x + sigma eps``
is itself a mixture with components ``N(alpha m_k, alpha^2 S_k + sigma^2 I)``,
so the posterior mean ``E[x | z]`` and the ideal epsilon-prediction are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, SingularityError
from ..schedules import NoiseLevel


@dataclass(frozen=True)
class GmmSpec:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, np.float64)
        m = np.atleast_2d(np.asarray(self.means, np.float64))
        c = np.asarray(self.covs, np.float64)
        if c.ndim == 2:  # one diagonal per component
            c = np.stack([np.diag(row) for row in c])
        if w.ndim != 1 or m.shape[0] != w.shape[0] or c.shape != (w.shape[0], m.shape[1], m.shape[1]):
            raise ShapeError(f"inconsistent GMM shapes {w.shape}, {m.shape}, {c.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if not np.allclose(c, np.swapaxes(c, 1, 2)) or np.any(np.linalg.eigvalsh(c) <= 0):
            raise SingularityError("component covariances must be symmetric positive definite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", c)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component(self, k: int) -> GmmSpec:
        return GmmSpec(np.ones(1), self.means[k:k + 1], self.covs[k:k + 1])

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` points; returns (points, component labels)."""
        labels = np.searchsorted(np.cumsum(self.weights), rng.uniform(n), side="right")
        labels = np.minimum(labels, len(self.weights) - 1)
        chol = np.linalg.cholesky(self.covs)
        eps = rng.normal((n, self.dim))
        return self.means[labels] + np.einsum("nij,nj->ni", chol[labels], eps), labels


def gmm_posterior_mean(z: np.ndarray, alpha, sigma, gmm: GmmSpec) -> np.ndarray:
    """``E[x | z]`` under the mixture, for scalar or per-row ``alpha, sigma``."""
    z = np.asarray(z, np.float64)
    if z.ndim != 2 or z.shape[1] != gmm.dim:
        raise ShapeError(f"expected (batch, {gmm.dim}) latents, got {z.shape}")
    n, d = z.shape
    a = np.broadcast_to(np.asarray(alpha, np.float64), (n,))[:, None, None, None]
    s = np.broadcast_to(np.asarray(sigma, np.float64), (n,))[:, None, None, None]
    cov = a**2 * gmm.covs[None] + s**2 * np.eye(d)  # (n, K, d, d)
    diff = z[:, None, :] - a[..., 0] * gmm.means[None]  # (n, K, d)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("noisy component covariance is singular") from exc
    sol = np.linalg.solve(cov, diff[..., None])[..., 0]
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)
    with np.errstate(divide="ignore"):
        logw = np.log(gmm.weights)
    logp = logw - 0.5 * (np.einsum("nkd,nkd->nk", diff, sol) + logdet)
    logp -= logp.max(axis=1, keepdims=True)
    r = np.exp(logp)
    r /= r.sum(axis=1, keepdims=True)
    post = gmm.means[None] + a[..., 0] * np.einsum("kij,nkj->nki", gmm.covs, sol)
    return np.einsum("nk,nkd->nd", r, post)


def gmm_oracle_eps(z_t: np.ndarray, level: NoiseLevel, gmm: GmmSpec) -> np.ndarray:
    """Ideal epsilon-prediction ``(z_t - alpha E[x|z_t]) / sigma``."""
    if np.any(np.asarray(level.sigma) <= 0):
        raise SingularityError("gmm oracle needs sigma_t > 0")
    alpha = np.asarray(level.alpha, np.float64)
    sigma = np.asarray(level.sigma, np.float64)
    z64 = np.asarray(z_t, np.float64)
    mean = gmm_posterior_mean(z64, alpha, sigma, gmm)
    col = (lambda v: v[:, None]) if alpha.ndim else (lambda v: v)
    eps = (z64 - col(alpha) * mean) / col(sigma)
    return eps.astype(np.asarray(z_t).dtype if np.issubdtype(np.asarray(z_t).dtype, np.floating) else np.float64)


class GmmDenoiser:
    """Oracle denoiser for a class-conditional mixture.

    ``cond`` is ``None`` or an integer label array: label ``k >= 0``
    conditions on component ``k`` alone, ``-1`` means the full mixture.
    """

    def __init__(self, gmm: GmmSpec):
        self.gmm = gmm

    def __call__(self, z_t, level: NoiseLevel, cond=None, **_):
        if cond is None:
            return gmm_oracle_eps(z_t, level, self.gmm)
        cond = np.broadcast_to(np.asarray(cond), (len(z_t),))
        out = np.empty(np.shape(z_t), dtype=np.asarray(z_t).dtype)
        for label in np.unique(cond):
            rows = cond == label
            spec = self.gmm if label < 0 else self.gmm.component(int(label))
            lvl = level if np.ndim(level.alpha) == 0 else level[rows]
            out[rows] = gmm_oracle_eps(np.asarray(z_t)[rows], lvl, spec)
        return out
