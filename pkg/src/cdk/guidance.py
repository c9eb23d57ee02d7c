"""Classifier-free guidance, thresholding, reverse-process steps and the sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import (
    _cast,
    _same_shape,
    eps_to_x,
    forward_marginal,
    null_condition,
    per_example,
    posterior_params,
)
from .errors import DomainError, NonFiniteError, OrderingError, SingularityError
from .rng import RngStream
from .schedules import Schedule, level_at, time_grid, transition_var

THRESHOLDS = ("none", "static", "dynamic")


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance weight and x-prediction thresholding mode."""

    w: float = 1.0
    threshold: str = "none"
    p: float = 99.5

    def __post_init__(self):
        if not np.isfinite(self.w) or self.w < 0:
            raise DomainError(f"guidance weight must be finite and >= 0, got {self.w}")
        if self.threshold not in THRESHOLDS:
            raise DomainError(f"threshold must be one of {THRESHOLDS}, got {self.threshold!r}")
        if not 0 < self.p <= 100:
            raise DomainError(f"percentile must be in (0, 100], got {self.p}")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ddim"
    steps: int = 64
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ddim", "ancestral"):
            raise DomainError(f"unknown sampler {self.kind!r}")
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must be in [0, 1], got {self.gamma}")


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    _same_shape(eps_cond, eps_uncond)
    return _cast(w * eps_cond + (1.0 - w) * eps_uncond, eps_cond)


def static_threshold(x_hat: np.ndarray) -> np.ndarray:
    return np.clip(x_hat, -1.0, 1.0)


def dynamic_threshold(x_hat: np.ndarray, p: float) -> np.ndarray:
    """Percentile-scaled clipping, one scale per sample.

    Axis 0 is the batch for arrays of rank >= 2; a rank-1 array is a single
    sample. ``s = max(percentile_p(|x|), 1)`` and the result is
    ``clip(x, -s, s) / s``.
    """
    if not 0 < p <= 100:
        raise DomainError(f"percentile must be in (0, 100], got {p}")
    x = np.asarray(x_hat)
    flat = x.reshape(1, -1) if x.ndim <= 1 else x.reshape(x.shape[0], -1)
    s = np.maximum(np.percentile(np.abs(flat), p, axis=1), 1.0).astype(x.dtype)
    s = s[0] if x.ndim <= 1 else per_example(s, x)
    return np.clip(x, -s, s) / s


def apply_threshold(x_hat: np.ndarray, guidance: GuidanceConfig) -> np.ndarray:
    if guidance.threshold == "static":
        return static_threshold(x_hat)
    if guidance.threshold == "dynamic":
        return dynamic_threshold(x_hat, guidance.p)
    return x_hat


def ddim_step(z_t: np.ndarray, x_hat: np.ndarray, s: float, t: float, schedule: Schedule) -> np.ndarray:
    """Deterministic update ``z_s = alpha_s x + (sigma_s / sigma_t)(z_t - alpha_t x)``."""
    if s >= t:
        raise OrderingError(f"need s < t, got s={s}, t={t}")
    _same_shape(z_t, x_hat)
    ls, lt = level_at(schedule, s), level_at(schedule, t)
    if lt.sigma == 0:
        raise SingularityError("ddim_step needs sigma_t > 0")
    return _cast(ls.alpha * x_hat + (ls.sigma / lt.sigma) * (z_t - lt.alpha * x_hat), z_t)


def ancestral_noise_var(s: float, t: float, gamma: float, schedule: Schedule) -> float:
    """Injected-noise variance: geometric blend of posterior and forward variances."""
    _, post_var = posterior_params(np.zeros(1), np.zeros(1), s, t, schedule)
    fwd_var = transition_var(schedule, s, t)
    return float(post_var ** (1.0 - gamma) * fwd_var ** gamma)


def ancestral_step(z_t: np.ndarray, x_hat: np.ndarray, s: float, t: float, gamma: float,
                   schedule: Schedule, eps: np.ndarray) -> np.ndarray:
    if s >= t:
        raise OrderingError(f"need s < t, got s={s}, t={t}")
    _same_shape(z_t, eps)
    mu, _ = posterior_params(z_t, x_hat, s, t, schedule)
    return _cast(mu + np.sqrt(ancestral_noise_var(s, t, gamma, schedule)) * eps, z_t)


def guided_eps(denoiser, z, level, cond, w: float, **kwargs) -> np.ndarray:
    # w == 1 and w == 0 are exact single-branch cases of cfg_combine
    if w == 1.0:
        return denoiser(z, level, cond, **kwargs)
    uncond = null_condition(cond)
    if w == 0.0:
        return denoiser(z, level, uncond, **kwargs)
    return cfg_combine(denoiser(z, level, cond, **kwargs), denoiser(z, level, uncond, **kwargs), w)


def sample(denoiser, cond, schedule: Schedule, sampler: SamplerConfig, guidance: GuidanceConfig,
           rng: RngStream, shape: tuple[int, ...], **denoiser_kwargs) -> np.ndarray:
    """Draw a batch of samples by reversing the diffusion from ``z_1 ~ N(0, I)``.

    ``shape`` is the full batch shape. At every step the guided epsilon is
    turned into an x-prediction, thresholded, and fed to the DDIM or
    ancestral update. Returns the x-prediction from the final step.
    Extra keyword arguments (e.g. ``x_lr``, ``aug``) go to the denoiser.
    """
    z = rng.normal(shape, dtype=np.float32)
    grid = time_grid(sampler.steps)
    x_hat = z
    for i in range(sampler.steps):
        t, s = float(grid[i]), float(grid[i + 1])
        level = level_at(schedule, t)
        eps = guided_eps(denoiser, z, level, cond, guidance.w, **denoiser_kwargs)
        x_hat = apply_threshold(eps_to_x(z, eps, level), guidance)
        if not np.all(np.isfinite(x_hat)):
            raise NonFiniteError(i, "x-prediction")
        if sampler.kind == "ddim":
            z = ddim_step(z, x_hat, s, t, schedule)
        else:
            noise = rng.normal(shape, dtype=np.float32)
            z = ancestral_step(z, x_hat, s, t, sampler.gamma, schedule, noise)
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(i)
    return x_hat


def apply_cond_aug(x_lr: np.ndarray, aug, schedule: Schedule, rng: RngStream) -> np.ndarray:
    """Corrupt a low-resolution conditioner with forward-process noise at time ``aug``."""
    aug_arr = np.asarray(aug, np.float64)
    if np.any(aug_arr < 0) or np.any(aug_arr > 1):
        raise DomainError(f"aug level must be in [0, 1], got {aug}")
    eps = rng.normal(np.shape(x_lr), dtype=np.float32)
    return forward_marginal(x_lr, level_at(schedule, aug), eps)
