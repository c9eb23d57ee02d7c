"""Epsilon-predictors: prompt encoder, Gaussian-mixture oracle and the toy U-Net."""

from .data import BlobDataset, gen_blob_dataset, render_blob
from .gmm import GmmDenoiser, GmmSpec, gmm_oracle_eps, gmm_posterior_mean
from .prompts import PromptEmbedding, encode_prompt, encode_prompts, null_embedding, parse_prompt
from .train import TrainConfig, TrainResult, train_denoiser
from .unet import BlockSpec, ToyUNetConfig, UNetDenoiser, init_unet, toy_unet_forward

__all__ = [
    "BlobDataset", "BlockSpec", "GmmDenoiser", "GmmSpec", "PromptEmbedding", "ToyUNetConfig",
    "TrainConfig", "TrainResult", "UNetDenoiser", "encode_prompt", "encode_prompts",
    "gen_blob_dataset", "gmm_oracle_eps", "gmm_posterior_mean", "init_unet", "null_embedding",
    "parse_prompt", "render_blob", "toy_unet_forward", "train_denoiser",
]
