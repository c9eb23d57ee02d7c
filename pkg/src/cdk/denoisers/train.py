"""Minibatch training of the toy U-Net on the epsilon-space denoising loss."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..diffusion import noisy_batch
from ..guidance import apply_cond_aug
from ..resample import upsample
from ..rng import RngStream
from ..schedules import COSINE, Schedule
from . import autodiff as ad
from .data import BlobDataset
from .prompts import encode_prompts, null_embedding
from .unet import ToyUNetConfig, as_tensors, init_unet, unet_apply

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 2e-3
    warmup_steps: int = 100
    optimizer: str = "adam"
    p_drop: float = 0.1
    grad_clip: float = 1.0
    aug: str = "uniform"  # "uniform": aug ~ U(0, 1) per example; "fixed": always aug_level
    aug_level: float = 0.0
    decay: str = "cosine"  # learning-rate decay to zero over the run, or "none"

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.aug not in ("uniform", "fixed"):
            raise ValueError(f"unknown aug mode {self.aug!r}")
        if self.decay not in ("cosine", "none"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("epochs, batch_size and warmup_steps must be non-negative (batch_size >= 1)")
        if not self.lr > 0 or self.grad_clip < 0:
            raise ValueError("lr must be positive and grad_clip non-negative")
        if not 0.0 <= self.p_drop <= 1.0 or not 0.0 <= self.aug_level <= 1.0:
            raise ValueError("p_drop and aug_level must lie in [0, 1]")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_trace: list[float]
    n_examples: int = 0
    n_dropped: int = 0
    seconds: float = 0.0

    @property
    def drop_fraction(self) -> float:
        return self.n_dropped / max(self.n_examples, 1)


@dataclass
class _Adam:
    lr: float
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def update(self, params, grads, lr_scale):
        self.step += 1
        c1 = 1 - self.b1 ** self.step
        c2 = 1 - self.b2 ** self.step
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= (self.lr * lr_scale / c1) * m / (np.sqrt(v / c2) + self.eps)


def _sgd(params, grads, lr):
    for k, g in grads.items():
        params[k] -= lr * g


def training_batch(dataset: BlobDataset, idx, embeddings, unet_cfg: ToyUNetConfig, tcfg: TrainConfig,
                   schedule: Schedule, rng: RngStream):
    """Assemble one noisy batch; returns (z_t, t, cond, x_lr, aug, eps, dropped)."""
    x = dataset.images[idx]
    cond = embeddings.take(idx)
    drop = rng.bernoulli(tcfg.p_drop, len(idx))
    cond = cond.where(~drop, null_embedding(len(idx)))
    x_lr = aug = None
    if unet_cfg.is_super_res:
        if tcfg.aug == "uniform":
            aug = rng.uniform(len(idx))
        else:
            aug = np.full(len(idx), tcfg.aug_level)
        low = apply_cond_aug(dataset.lowres[idx], aug, schedule, rng)
        x_lr = upsample(low, unet_cfg.resolution // low.shape[-1])
    level, eps, z_t = noisy_batch(x, schedule, rng)
    return z_t, level.t, cond, x_lr, aug, eps, int(drop.sum())


def loss_and_grads(params: dict[str, np.ndarray], unet_cfg: ToyUNetConfig, z_t, t, cond, eps,
                   x_lr=None, aug=None):
    P = as_tensors(params, requires_grad=True)
    out = unet_apply(P, unet_cfg, z_t, t, cond, x_lr, aug)
    loss = ad.mse(out, np.transpose(eps, (0, 2, 3, 1)))
    loss.backward()
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in P.items()}
    return float(loss.data), grads


def train_denoiser(dataset: BlobDataset, unet_cfg: ToyUNetConfig, tcfg: TrainConfig, rng: RngStream,
                   schedule: Schedule = COSINE, params: dict[str, np.ndarray] | None = None,
                   epochs: int | None = None) -> TrainResult:
    """Train (or continue training) a toy U-Net; returns params and per-epoch mean loss.

    Super-resolution configs train on ``dataset.images`` conditioned on the
    corrupted, upsampled ``dataset.lowres``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.resolution != unet_cfg.resolution:
        raise ValueError(f"dataset resolution {dataset.resolution} != model resolution {unet_cfg.resolution}")
    if unet_cfg.is_super_res and dataset.lowres is None:
        raise ValueError("super-resolution training needs low-res images")
    epochs = tcfg.epochs if epochs is None else epochs
    params = {k: v.copy() for k, v in (params or init_unet(unet_cfg, rng.spawn(0))).items()}
    embeddings = encode_prompts(dataset.prompts)
    order_rng, batch_rng = rng.spawn(1), rng.spawn(2)
    adam = _Adam(tcfg.lr) if tcfg.optimizer == "adam" else None
    total = epochs * -(-len(dataset) // tcfg.batch_size)
    trace, step, n_seen, n_drop = [], 0, 0, 0
    start = time.perf_counter()
    for epoch in range(epochs):
        perm = order_rng.permutation(len(dataset))
        losses = []
        for lo in range(0, len(perm), tcfg.batch_size):
            idx = perm[lo:lo + tcfg.batch_size]
            z_t, t, cond, x_lr, aug, eps, dropped = training_batch(
                dataset, idx, embeddings, unet_cfg, tcfg, schedule, batch_rng)
            loss, grads = loss_and_grads(params, unet_cfg, z_t, t, cond, eps, x_lr, aug)
            if tcfg.grad_clip:
                norm = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
                if norm > tcfg.grad_clip:
                    scale = np.float32(tcfg.grad_clip / norm)
                    grads = {k: g * scale for k, g in grads.items()}
            step += 1
            lr_scale = min(1.0, step / tcfg.warmup_steps) if tcfg.warmup_steps else 1.0
            if tcfg.decay == "cosine":
                lr_scale *= 0.5 * (1.0 + np.cos(np.pi * (step - 1) / total))
            if adam is not None:
                adam.update(params, grads, lr_scale)
            else:
                _sgd(params, grads, tcfg.lr * lr_scale)
            losses.append(loss)
            n_seen += len(idx)
            n_drop += dropped
        trace.append(float(np.mean(losses)))
        log.info("epoch %d/%d loss %.4f (%.0fs)", epoch + 1, epochs, trace[-1], time.perf_counter() - start)
    return TrainResult(params, trace, n_seen, n_drop, time.perf_counter() - start)
