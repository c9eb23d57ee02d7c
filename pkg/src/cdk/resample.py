"""Area downsampling and bilinear upsampling of (..., H, W) images."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool the last two axes by ``factor``."""
    *lead, h, w = image.shape
    if h % factor or w % factor:
        raise ShapeError(f"{h}x{w} not divisible by {factor}")
    if factor == 1:
        return image.copy()
    blocks = image.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(-3, -1)).astype(image.dtype)


def _bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centers, edge-clamped; each row sums to 1
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def upsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling of the last two axes by ``factor``."""
    *_, h, w = image.shape
    if factor == 1:
        return image.copy()
    rows = _bilinear_weights(h, h * factor)
    cols = _bilinear_weights(w, w * factor)
    out = np.einsum("ij,...jk,lk->...il", rows, image.astype(np.float64), cols)
    return out.astype(image.dtype)
