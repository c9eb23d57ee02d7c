"""Toy image features, Frechet distance and prompt-image alignment."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..denoisers.data import gen_blob_dataset
from ..denoisers.prompts import EMBED_DIM, encode_prompt, encode_prompts
from ..resample import downsample
from ..rng import RngStream

POOL_RES = 4
N_PROJ = 8
FEATURE_SEED = 0xFEA7
ALIGN_FIT_SIZE = 2048
ALIGN_RIDGE = 1e-2


def feature_dim(channels: int = 3) -> int:
    """channel means + left/right and top/bottom differences per channel + projections."""
    return 3 * channels + N_PROJ


@functools.lru_cache(maxsize=4)
def _projection(channels: int) -> np.ndarray:
    n_in = channels * POOL_RES * POOL_RES
    return RngStream(FEATURE_SEED, channels).normal((n_in, N_PROJ)) / np.sqrt(n_in)


def image_features(image: np.ndarray) -> np.ndarray:
    """Frozen feature vector(s) of (C, H, W) or (B, C, H, W) images.

    Layout: per-channel mean, per-channel left-minus-right half mean,
    per-channel top-minus-bottom half mean, then a fixed random projection
    of the image area-pooled to 4x4.
    """
    x = np.asarray(image, np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    b, c, h, w = x.shape
    means = x.mean(axis=(2, 3))
    lr = x[..., : w // 2].mean(axis=(2, 3)) - x[..., w // 2:].mean(axis=(2, 3))
    tb = x[:, :, : h // 2].mean(axis=(2, 3)) - x[:, :, h // 2:].mean(axis=(2, 3))
    pooled = downsample(x, h // POOL_RES).reshape(b, -1)
    feats = np.concatenate([means, lr, tb, pooled @ _projection(c)], axis=1)
    return feats[0] if single else feats


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray


def fit_gaussian(features: np.ndarray | Sequence[np.ndarray]) -> GaussianFit:
    """Sample mean and biased (1/N) covariance."""
    f = np.asarray(features, np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("need at least two feature vectors")
    mu = f.mean(axis=0)
    d = f - mu
    cov = d.T @ d / f.shape[0]
    return GaussianFit(mu, 0.5 * (cov + cov.T))


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianFit, b: GaussianFit) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The trace of the product square root is computed from the eigenvalues of
    the symmetric matrix ``S_a^(1/2) S_b S_a^(1/2)`` (same spectrum as
    ``S_a S_b``); negative eigenvalues from round-off are clamped to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch {a.mean.shape} vs {b.mean.shape}")
    ra = _sqrt_psd(a.cov)
    m = ra @ b.cov @ ra
    eig = np.linalg.eigvalsh(0.5 * (m + m.T))
    tr_sqrt = np.sqrt(np.clip(eig, 0.0, None)).sum()
    diff = a.mean - b.mean
    return float(max(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt, 0.0))


def fid_toy(images: np.ndarray, reference: GaussianFit | np.ndarray) -> float:
    ref = reference if isinstance(reference, GaussianFit) else fit_gaussian(image_features(reference))
    return frechet_distance(fit_gaussian(image_features(images)), ref)


@functools.lru_cache(maxsize=1)
def _alignment_map():
    # frozen text->feature map: ridge regression on a fixed synthetic corpus
    ds = gen_blob_dataset(ALIGN_FIT_SIZE, 16, RngStream(FEATURE_SEED, 99))
    feats = image_features(ds.images)
    center = feats.mean(axis=0)
    x = encode_prompts(ds.prompts).pooled.astype(np.float64)
    y = feats - center
    w = np.linalg.solve(x.T @ x + ALIGN_RIDGE * len(x) * np.eye(EMBED_DIM), x.T @ y)
    return w, center


def alignment_score(image: np.ndarray, prompt) -> float | np.ndarray:
    """Cosine between the prompt mapped into feature space and the centered image features.

    ``image`` may be a batch, in which case ``prompt`` is a list of the same length.
    """
    w, center = _alignment_map()
    feats = image_features(image) - center
    if np.ndim(image) == 3:
        text = encode_prompt(prompt).pooled @ w
        return float(text @ feats / (np.linalg.norm(text) * np.linalg.norm(feats) + 1e-12))
    text = encode_prompts(prompt).pooled.astype(np.float64) @ w
    num = np.einsum("nd,nd->n", text, feats)
    return num / (np.linalg.norm(text, axis=1) * np.linalg.norm(feats, axis=1) + 1e-12)
