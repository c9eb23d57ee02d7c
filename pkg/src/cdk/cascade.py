"""Base model followed by super-resolution stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .denoisers.prompts import PromptEmbedding, encode_prompts
from .errors import ShapeError
from .guidance import GuidanceConfig, SamplerConfig, apply_cond_aug, sample
from .resample import downsample, upsample
from .rng import RngStream
from .schedules import COSINE, Schedule

__all__ = ["CascadeStage", "CascadeResult", "downsample", "upsample", "run_cascade", "check_chain"]


@dataclass
class CascadeStage:
    """One stage of the pipeline.

    ``denoiser`` follows the sampler's denoiser protocol; super-resolution
    denoisers additionally accept ``x_lr`` (already upsampled) and ``aug``.
    ``prompt`` overrides the pipeline prompt for this stage only.
    """

    role: str
    out_res: int
    denoiser: Callable
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    in_res: int | None = None
    aug: float = 0.0
    channels: int = 3
    prompt: str | None = None

    def __post_init__(self):
        if self.role not in ("base", "super_res"):
            raise ValueError(f"unknown stage role {self.role!r}")
        if not 0.0 <= self.aug <= 1.0:
            raise ValueError(f"aug must be in [0, 1], got {self.aug}")


@dataclass
class CascadeResult:
    final: np.ndarray
    intermediates: list[np.ndarray]


def check_chain(stages: Sequence[CascadeStage]):
    if not stages or stages[0].role != "base":
        raise ShapeError("a cascade starts with a base stage")
    if stages[0].in_res is not None:
        raise ShapeError("the base stage takes no low-res input")
    prev = stages[0].out_res
    for st in stages[1:]:
        if st.role != "super_res":
            raise ShapeError("only the first stage may be a base stage")
        if st.in_res != prev or st.out_res != 2 * st.in_res:
            raise ShapeError(f"stage {st.in_res}->{st.out_res} does not follow resolution {prev}")
        prev = st.out_res


def _conditioning(prompts: Sequence[str]) -> PromptEmbedding:
    return encode_prompts(prompts)


def run_cascade(stages: Sequence[CascadeStage], prompts: str | Sequence[str], rng: RngStream,
                schedule: Schedule = COSINE) -> CascadeResult:
    """Sample the base image then refine it through every super-resolution stage.

    ``prompts`` is one prompt or a list (one image per prompt). Stage ``i``
    draws all of its randomness from ``rng.spawn(i)``.
    """
    check_chain(stages)
    prompts = [prompts] if isinstance(prompts, str) else list(prompts)
    n = len(prompts)
    images: list[np.ndarray] = []
    prev = None
    for i, st in enumerate(stages):
        cond = _conditioning([st.prompt] * n if st.prompt is not None else prompts)
        stage_rng = rng.spawn(i)
        shape = (n, st.channels, st.out_res, st.out_res)
        if st.role == "base":
            out = sample(st.denoiser, cond, schedule, st.sampler, st.guidance, stage_rng.spawn(2), shape)
        else:
            low = apply_cond_aug(prev, st.aug, schedule, stage_rng.spawn(1))
            x_lr = upsample(low, st.out_res // st.in_res)
            out = sample(st.denoiser, cond, schedule, st.sampler, st.guidance, stage_rng.spawn(2), shape,
                         x_lr=x_lr, aug=np.full(n, st.aug))
        images.append(out)
        prev = out
    return CascadeResult(images[-1], images)
