"""Continuous-time variance-preserving noise schedules.

A schedule maps time ``t`` in [0, 1] to a :class:`NoiseLevel` with
``alpha**2 + sigma**2 == 1`` and log-SNR ``lambda = log(alpha**2 / sigma**2)``
strictly decreasing in ``t``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OrderingError

COSINE_OFFSET = 0.008
ALPHA2_MIN = 1e-5
ALPHA2_MAX = 1.0 - 1e-5


@dataclass(frozen=True)
class Schedule:
    """Schedule selection; ``beta_*`` and ``n_steps`` apply to ``linear`` only."""

    kind: str = "cosine"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    n_steps: int = 1000

    def __post_init__(self):
        if self.kind not in ("cosine", "linear"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "linear":
            if not self.beta_start < self.beta_end:
                raise DomainError("beta_start must be < beta_end")
            if self.n_steps < 2:
                raise DomainError("n_steps must be >= 2")


COSINE = Schedule("cosine")
LINEAR = Schedule("linear")


@dataclass(frozen=True)
class NoiseLevel:
    """One point (or a batch of points) on a schedule."""

    t: np.ndarray | float
    alpha: np.ndarray | float
    sigma: np.ndarray | float
    lam: np.ndarray | float

    def __getitem__(self, idx) -> NoiseLevel:
        return NoiseLevel(*(np.asarray(v)[idx] for v in (self.t, self.alpha, self.sigma, self.lam)))


@functools.lru_cache(maxsize=8)
def _linear_log_alpha_bar(beta_start: float, beta_end: float, n_steps: int) -> np.ndarray:
    betas = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
    grid = np.concatenate([[0.0], np.cumsum(np.log1p(-betas))])
    grid.flags.writeable = False
    return grid


def alpha_squared(schedule: Schedule, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"t must lie in [0, 1], got {t}")
    if schedule.kind == "cosine":
        s = COSINE_OFFSET
        f = np.cos(0.5 * np.pi * (t + s) / (1 + s)) ** 2 / np.cos(0.5 * np.pi * s / (1 + s)) ** 2
        # affine squash rather than a hard clip: keeps lambda strictly monotone at t -> 1
        return ALPHA2_MIN + (ALPHA2_MAX - ALPHA2_MIN) * f
    grid = _linear_log_alpha_bar(schedule.beta_start, schedule.beta_end, schedule.n_steps)
    x = t * schedule.n_steps
    log_ab = np.interp(x, np.arange(schedule.n_steps + 1, dtype=np.float64), grid)
    return np.clip(np.exp(log_ab), ALPHA2_MIN, ALPHA2_MAX)


def level_at(schedule: Schedule, t) -> NoiseLevel:
    """Noise level at time ``t`` (scalar or array)."""
    a2 = alpha_squared(schedule, t)
    s2 = 1.0 - a2
    level = NoiseLevel(
        t=np.asarray(t, dtype=np.float64),
        alpha=np.sqrt(a2),
        sigma=np.sqrt(s2),
        lam=np.log(a2) - np.log(s2),
    )
    if np.ndim(t) == 0:
        level = NoiseLevel(*(float(v) for v in (level.t, level.alpha, level.sigma, level.lam)))
    return level


def _check_order(s, t):
    if np.any(np.asarray(s) >= np.asarray(t)):
        raise OrderingError(f"need s < t, got s={s}, t={t}")


def transition_var(schedule: Schedule, s, t):
    """Variance of q(z_t | z_s): ``(1 - exp(lambda_t - lambda_s)) * sigma_t**2``."""
    _check_order(s, t)
    ls, lt = level_at(schedule, s), level_at(schedule, t)
    return np.maximum(-np.expm1(np.asarray(lt.lam) - ls.lam), 0.0) * np.square(lt.sigma)


def time_grid(steps: int) -> np.ndarray:
    """Uniform decreasing grid ``1 = t_0 > ... > t_steps = 0``."""
    if steps < 1:
        raise DomainError("steps must be >= 1")
    return np.linspace(1.0, 0.0, steps + 1)
