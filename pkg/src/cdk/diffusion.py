"""Forward process algebra shared by the samplers and the trainer.

Tensors are plain float32 numpy arrays. Noise levels may be scalars or
per-example arrays of length ``batch`` (broadcast over the trailing axes).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import OrderingError, ShapeError, SingularityError
from .rng import RngStream
from .schedules import NoiseLevel, Schedule, level_at, transition_var

DTYPE = np.float32


@dataclass
class DiffusionState:
    z: np.ndarray
    t: float


def per_example(v, x: np.ndarray) -> np.ndarray | float:
    """Reshape a per-example coefficient so it broadcasts against ``x``."""
    v = np.asarray(v)
    if v.ndim == 0:
        return float(v)
    return v.reshape(v.shape + (1,) * (x.ndim - v.ndim))


def _same_shape(a: np.ndarray, b: np.ndarray):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def _cast(v, like: np.ndarray) -> np.ndarray:
    dtype = like.dtype if np.issubdtype(like.dtype, np.floating) else DTYPE
    return np.asarray(v, dtype=dtype)


def forward_marginal(x: np.ndarray, level: NoiseLevel, eps: np.ndarray) -> np.ndarray:
    """Sample of q(z_t | x) given the noise draw: ``alpha * x + sigma * eps``."""
    _same_shape(x, eps)
    return _cast(per_example(level.alpha, x) * x + per_example(level.sigma, x) * eps, x)


def forward_transition(z_s: np.ndarray, s, t, schedule: Schedule, eps: np.ndarray) -> np.ndarray:
    """Sample of q(z_t | z_s) for ``s < t``."""
    if np.any(np.asarray(s) >= np.asarray(t)):
        raise OrderingError(f"need s < t, got s={s}, t={t}")
    _same_shape(z_s, eps)
    ls, lt = level_at(schedule, s), level_at(schedule, t)
    ratio = per_example(np.asarray(lt.alpha) / ls.alpha, z_s)
    std = per_example(np.sqrt(transition_var(schedule, s, t)), z_s)
    return _cast(ratio * z_s + std * eps, z_s)


def posterior_params(z_t: np.ndarray, x: np.ndarray, s, t, schedule: Schedule):
    """Mean and variance of q(z_s | z_t, x)."""
    if np.any(np.asarray(s) >= np.asarray(t)):
        raise OrderingError(f"need s < t, got s={s}, t={t}")
    _same_shape(z_t, x)
    ls, lt = level_at(schedule, s), level_at(schedule, t)
    snr_ratio = np.exp(np.asarray(lt.lam) - ls.lam)
    one_minus = -np.expm1(np.asarray(lt.lam) - ls.lam)
    mu = (per_example(snr_ratio * ls.alpha / lt.alpha, z_t) * z_t
          + per_example(one_minus * ls.alpha, x) * x)
    var = np.maximum(one_minus, 0.0) * np.square(ls.sigma)
    return _cast(mu, z_t), var


def eps_to_x(z_t: np.ndarray, eps_hat: np.ndarray, level: NoiseLevel) -> np.ndarray:
    """x-prediction implied by an epsilon-prediction."""
    _same_shape(z_t, eps_hat)
    if np.any(np.asarray(level.sigma) == 0):
        raise SingularityError("eps_to_x needs sigma_t > 0")
    return _cast((z_t - per_example(level.sigma, z_t) * eps_hat) / per_example(level.alpha, z_t), z_t)


def x_to_eps(z_t: np.ndarray, x_hat: np.ndarray, level: NoiseLevel) -> np.ndarray:
    _same_shape(z_t, x_hat)
    if np.any(np.asarray(level.sigma) == 0):
        raise SingularityError("x_to_eps needs sigma_t > 0")
    return _cast((z_t - per_example(level.alpha, z_t) * x_hat) / per_example(level.sigma, z_t), z_t)


def noisy_batch(x: np.ndarray, schedule: Schedule, rng: RngStream):
    """Draw ``t ~ U(0, 1)`` per example and ``eps ~ N(0, I)``; return (level, eps, z_t)."""
    t = rng.uniform(x.shape[0])
    eps = rng.normal(x.shape, dtype=x.dtype)
    level = level_at(schedule, t)
    return level, eps, forward_marginal(x, level, eps)


def denoising_loss(denoiser, x: np.ndarray, cond, schedule: Schedule, rng: RngStream, **kwargs) -> float:
    """Epsilon-space mean squared error of ``denoiser`` on a fresh noisy batch.

    ``denoiser(z_t, level, cond, **kwargs)`` must return an array shaped like
    ``x``. The squared error is averaged over every element.
    """
    level, eps, z_t = noisy_batch(x, schedule, rng)
    eps_hat = denoiser(z_t, level, cond, **kwargs)
    _same_shape(eps_hat, eps)
    return float(np.mean(np.square(np.asarray(eps_hat, np.float64) - eps)))


@functools.singledispatch
def null_condition(cond):
    """The "no conditioning" counterpart of ``cond`` (used by guidance)."""
    raise TypeError(f"no null conditioning for {type(cond).__name__}")


@null_condition.register(type(None))
def _(cond):
    return None


@null_condition.register(np.ndarray)
def _(cond):
    # integer class labels; -1 marks "unconditional"
    return np.full_like(cond, -1)


def drop_conditioning(cond, p_drop: float, rng: RngStream):
    """Return the null conditioning with probability ``p_drop``, else ``cond``."""
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError(f"p_drop must be in [0, 1], got {p_drop}")
    return null_condition(cond) if rng.uniform() < p_drop else cond
