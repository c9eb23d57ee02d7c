"""Synthetic prompted images: one colored Gaussian blob per image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..resample import downsample
from ..rng import RngStream
from .prompts import COLORS, POSITIONS, SIZES, VOCAB, PromptSeq, parse_prompt

BACKGROUND = -0.6
AMPLITUDE = 1.5
PIXEL_NOISE = 0.02
POSITION_JITTER = 0.06
RESOLUTIONS = (8, 16, 32)


@dataclass
class BlobDataset:
    images: np.ndarray  # (n, 3, R, R)
    prompts: list[PromptSeq]
    lowres: np.ndarray | None = None  # (n, 3, R/2, R/2)

    def __len__(self) -> int:
        return len(self.prompts)

    @property
    def resolution(self) -> int:
        return self.images.shape[-1]

    def subset(self, idx) -> BlobDataset:
        idx = np.asarray(idx, dtype=np.int64)
        return BlobDataset(
            self.images[idx],
            [self.prompts[i] for i in idx],
            None if self.lowres is None else self.lowres[idx],
        )

    def at_resolution(self, resolution: int) -> BlobDataset:
        """Images area-downsampled to ``resolution`` (with their own low-res pairs)."""
        imgs = downsample(self.images, self.resolution // resolution)
        low = downsample(imgs, 2) if resolution >= 2 * RESOLUTIONS[0] else None
        return BlobDataset(imgs, list(self.prompts), low)


def random_prompts(n: int, rng: RngStream, vocab=VOCAB) -> list[PromptSeq]:
    colors = [c for c in COLORS if c in vocab]
    positions = [p for p in POSITIONS if p in vocab]
    sizes = [s for s in SIZES if s in vocab]
    ci = rng.integers(len(colors), n)
    pi = rng.integers(len(positions), n)
    si = rng.integers(2 * len(sizes), n) if sizes else np.full(n, -1)
    out = []
    for c, p, s in zip(ci, pi, si):
        toks = (colors[c], positions[p])
        if 0 <= s < len(sizes):
            toks += (sizes[s],)
        out.append(toks)
    return out


def render_blob(prompt: PromptSeq, resolution: int, rng: RngStream, noise: float = PIXEL_NOISE) -> np.ndarray:
    """Render one image in [-1, 1] whose blob follows the prompt's tokens.

    Missing attributes are drawn at random: color uniformly, position at the
    center, size between small and large.
    """
    tokens = parse_prompt(prompt)
    color = next((COLORS[t] for t in tokens if t in COLORS), None)
    if color is None:
        color = list(COLORS.values())[rng.integers(len(COLORS))]
    center = next((POSITIONS[t] for t in tokens if t in POSITIONS), POSITIONS["center"])
    size = next((SIZES[t] for t in tokens if t in SIZES), None)
    jitter = rng.uniform(3)
    if size is None:
        size = SIZES["small"] + (SIZES["large"] - SIZES["small"]) * jitter[2]
    else:
        size *= 0.9 + 0.2 * jitter[2]
    r0 = center[0] + POSITION_JITTER * (2 * jitter[0] - 1)
    c0 = center[1] + POSITION_JITTER * (2 * jitter[1] - 1)
    coords = (np.arange(resolution) + 0.5) / resolution
    g = np.exp(-((coords[:, None] - r0) ** 2 + (coords[None, :] - c0) ** 2) / (2 * size**2))
    img = BACKGROUND + AMPLITUDE * np.asarray(color)[:, None, None] * g[None]
    if noise:
        img = img + noise * rng.normal(img.shape)
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def gen_blob_dataset(n: int, resolution: int, rng: RngStream, vocab=VOCAB) -> BlobDataset:
    """``n`` aligned (image, prompt) pairs plus 2x-downsampled low-res images."""
    if resolution not in RESOLUTIONS:
        raise ValueError(f"resolution must be one of {RESOLUTIONS}")
    prompts = random_prompts(n, rng.spawn(1), vocab)
    render_rng = rng.spawn(2)
    images = np.stack([render_blob(p, resolution, render_rng) for p in prompts]) if n else \
        np.zeros((0, 3, resolution, resolution), np.float32)
    lowres = downsample(images, 2) if resolution > RESOLUTIONS[0] else None
    return BlobDataset(images, prompts, lowres)
