"""Toy experiment settings shared by the acceptance suite, scripts and example configs.

Base model at 8x8, one super-resolution stage 8 -> 16, trained on 4096 blob
images and scored against 1024 held-out images.
"""

from __future__ import annotations

from .denoisers.unet import BlockSpec, ToyUNetConfig
from .denoisers.train import TrainConfig
from .guidance import GuidanceConfig, SamplerConfig

N_TRAIN = 4096
N_HELDOUT = 1024
N_EVAL = 256

# seeds of the independent streams used by the experiments
SEED_DATA, SEED_HELDOUT, SEED_BASE, SEED_SR, SEED_SAMPLE = 1, 2, 3, 4, 5

BASE_MODEL = ToyUNetConfig(resolution=8)
SR_MODEL = ToyUNetConfig(resolution=16, lowres_channels=3,
                         blocks=(BlockSpec(16, 1), BlockSpec(32, 1), BlockSpec(64, 2, True, True)))
BASE_TRAIN = TrainConfig(epochs=8)
SR_TRAIN = TrainConfig(epochs=16)
SR_TRAIN_NO_AUG = TrainConfig(epochs=16, aug="fixed", aug_level=0.0)

BASE_SAMPLER = SamplerConfig("ddim", 32)
# ancestral steps re-inject noise, which corrects super-resolution drift better than DDIM here
SR_SAMPLER = SamplerConfig("ancestral", 32, gamma=1.0)
GUIDANCE = GuidanceConfig(1.0, "dynamic")
SR_AUG_LEVELS = (0.0, 0.1, 0.2)
