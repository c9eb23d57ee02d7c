"""Guidance-weight sweeps: fidelity/alignment trade-off rows."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ..cascade import run_cascade
from ..denoisers.data import BlobDataset
from ..denoisers.prompts import encode_prompts
from ..guidance import GuidanceConfig, SamplerConfig, sample
from ..rng import RngStream
from ..schedules import COSINE, Schedule
from .metrics import alignment_score, fid_toy, fit_gaussian, image_features

DEFAULT_WEIGHTS = (1.0, 1.25, 1.5, 1.75, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0)
SWEEP_HEADER = ("w", "fid_toy", "align_toy", "n")

# generate(w, prompts, rng) -> images (n, C, H, W)
Generator = Callable[[float, list, RngStream], np.ndarray]


@dataclass(frozen=True)
class SweepRow:
    w: float
    fid_toy: float
    align_toy: float
    n_samples: int


def guidance_sweep(generate: Generator, reference: BlobDataset, rng: RngStream,
                   weights: Sequence[float] = DEFAULT_WEIGHTS, n: int = 64) -> list[SweepRow]:
    """Sample ``n`` images per guidance weight and score them against ``reference``.

    Every weight reuses the same prompts (the first ``n`` reference prompts,
    cycled) and the same random stream, so rows differ only through ``w``.
    """
    if len(reference) == 0:
        raise ValueError("empty reference set")
    if n < 32:
        raise ValueError("a sweep needs at least 32 samples per weight")
    ref_fit = fit_gaussian(image_features(reference.images))
    prompts = [reference.prompts[i % len(reference)] for i in range(n)]
    rows = []
    for w in sorted(set(float(w) for w in weights)):
        images = generate(w, prompts, rng.spawn(0))
        rows.append(SweepRow(w, fid_toy(images, ref_fit), float(np.mean(alignment_score(images, prompts))), n))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(SWEEP_HEADER)
    for r in sorted(rows, key=lambda r: r.w):
        out.writerow([f"{r.w:g}", f"{r.fid_toy:.6f}", f"{r.align_toy:.6f}", r.n_samples])
    return buf.getvalue()


def model_generator(denoiser, resolution: int, sampler: SamplerConfig, threshold: str = "dynamic",
                    p: float = 99.5, schedule: Schedule = COSINE, channels: int = 3) -> Generator:
    """Sweep generator for a single (base) model."""

    def generate(w, prompts, rng):
        cond = encode_prompts(prompts)
        shape = (len(prompts), channels, resolution, resolution)
        return sample(denoiser, cond, schedule, sampler, GuidanceConfig(w, threshold, p), rng, shape)

    return generate


def cascade_generator(stages, schedule: Schedule = COSINE) -> Generator:
    """Sweep generator for a cascade; the swept weight replaces the base stage's."""

    def generate(w, prompts, rng):
        base = replace(stages[0], guidance=replace(stages[0].guidance, w=w))
        return run_cascade([base, *stages[1:]], [" ".join(p) for p in prompts], rng, schedule).final

    return generate
