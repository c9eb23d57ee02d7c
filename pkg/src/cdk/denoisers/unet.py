"""Toy Efficient U-Net epsilon-predictor.

Layout follows the efficient variant: downsampling blocks convolve with a
stride *first* and then run their residual blocks; upsampling blocks run
their residual blocks first and upsample at the end. Skip connections are
added with a ``1/sqrt(2)`` scale, and most parameters live at the lowest
resolution.

Parameters are a flat ``dict[str, np.ndarray]``; block functions take a dict
of :class:`~cdk.denoisers.autodiff.Tensor` plus a name prefix.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeError
from ..rng import RngStream
from ..schedules import NoiseLevel
from . import autodiff as ad
from .autodiff import Tensor
from .prompts import EMBED_DIM, PromptEmbedding

CONDITIONING_MODES = ("mean_pool", "attention_pool", "cross_attention")
TIME_FEATURES = 32


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    num_res_blocks: int = 1
    self_attention: bool = False
    cross_attention: bool = False


@dataclass(frozen=True)
class ToyUNetConfig:
    """Architecture of one toy U-Net.

    ``blocks`` run from the highest resolution (no stride) down to the
    lowest; every later block halves the resolution. ``lowres_channels > 0``
    makes a super-resolution model that also takes ``x_lr`` and ``aug``.
    """

    resolution: int = 8
    image_channels: int = 3
    lowres_channels: int = 0
    blocks: tuple[BlockSpec, ...] = (
        BlockSpec(32, 1),
        BlockSpec(64, 2, self_attention=True, cross_attention=True),
    )
    conditioning: str = "cross_attention"
    emb_dim: int = 64
    text_dim: int = EMBED_DIM
    heads: int = 2
    skip_scale: float = 2.0 ** -0.5

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(
            b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks))
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.conditioning!r}")
        chans = [b.channels for b in self.blocks]
        if any(b < a for a, b in zip(chans, chans[1:])):
            raise ValueError("channels must not decrease toward low resolution")
        if self.blocks[-1].num_res_blocks < self.blocks[0].num_res_blocks:
            raise ValueError("lowest resolution needs at least as many res blocks as the highest")
        if self.resolution % 2 ** (len(self.blocks) - 1):
            raise ValueError("resolution not divisible by the downsampling factor")
        for c in chans:
            if c % groups_for(c) or c % self.heads:
                raise ValueError(f"channels {c} incompatible with group norm / heads")

    @property
    def is_super_res(self) -> bool:
        return self.lowres_channels > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ToyUNetConfig:
        d = dict(d)
        d["blocks"] = tuple(BlockSpec(**b) for b in d["blocks"])
        return cls(**d)


def groups_for(channels: int) -> int:
    return min(8, channels)


# --- parameter initialisation ---------------------------------------------


class _Init:
    def __init__(self, rng: RngStream):
        self.rng = rng
        self.params: dict[str, np.ndarray] = {}

    def normal(self, name, shape, fan_in):
        self.params[name] = (self.rng.normal(shape) / math.sqrt(fan_in)).astype(np.float32)

    def zeros(self, name, shape):
        self.params[name] = np.zeros(shape, np.float32)

    def ones(self, name, shape):
        self.params[name] = np.ones(shape, np.float32)

    def conv(self, name, k, cin, cout):
        self.normal(f"{name}.w", (k, k, cin, cout), k * k * cin)
        self.zeros(f"{name}.b", (cout,))

    def dense(self, name, cin, cout, bias=True):
        self.normal(f"{name}.w", (cin, cout), cin)
        if bias:
            self.zeros(f"{name}.b", (cout,))

    def norm(self, name, c):
        self.ones(f"{name}.g", (c,))
        self.zeros(f"{name}.b", (c,))


def init_resnet_block(init: _Init, name: str, cin: int, cout: int):
    init.norm(f"{name}.gn0", cin)
    init.conv(f"{name}.conv0", 3, cin, cout)
    init.norm(f"{name}.gn1", cout)
    init.conv(f"{name}.conv1", 3, cout, cout)
    init.dense(f"{name}.skip", cin, cout)


def init_self_attention(init: _Init, name: str, c: int):
    init.norm(f"{name}.gn", c)
    init.dense(f"{name}.qkv", c, 3 * c, bias=False)
    init.dense(f"{name}.out", c, c)


def init_cross_attention(init: _Init, name: str, c: int, text_dim: int):
    init.norm(f"{name}.gn", c)
    init.dense(f"{name}.q", c, c, bias=False)
    init.dense(f"{name}.kv", text_dim, 2 * c, bias=False)
    init.dense(f"{name}.out", c, c)


def init_combine_embs(init: _Init, name: str, emb_dim: int, c: int):
    init.dense(name, emb_dim, c)


def init_dblock(init: _Init, name: str, cfg: ToyUNetConfig, cin: int, spec: BlockSpec, stride: bool):
    c = spec.channels
    if stride:
        init.conv(f"{name}.down", 3, cin, c)
        cin = c
    init_combine_embs(init, f"{name}.emb", cfg.emb_dim, cin)
    for j in range(spec.num_res_blocks):
        init_resnet_block(init, f"{name}.res{j}", cin if j == 0 else c, c)
    if spec.self_attention:
        init_self_attention(init, f"{name}.attn", c)
    if spec.cross_attention and cfg.conditioning == "cross_attention":
        init_cross_attention(init, f"{name}.xattn", c, cfg.text_dim)


def init_ublock(init: _Init, name: str, cfg: ToyUNetConfig, spec: BlockSpec, cout: int | None):
    c = spec.channels
    init_combine_embs(init, f"{name}.emb", cfg.emb_dim, c)
    for j in range(spec.num_res_blocks):
        init_resnet_block(init, f"{name}.res{j}", c, c)
    if spec.self_attention:
        init_self_attention(init, f"{name}.attn", c)
    if spec.cross_attention and cfg.conditioning == "cross_attention":
        init_cross_attention(init, f"{name}.xattn", c, cfg.text_dim)
    if cout is not None:
        init.conv(f"{name}.up", 3, c, cout)


def init_unet(cfg: ToyUNetConfig, rng: RngStream) -> dict[str, np.ndarray]:
    """Randomly initialised parameters for ``cfg``."""
    init = _Init(rng)
    n_time = TIME_FEATURES * (2 if cfg.is_super_res else 1)
    init.dense("time.fc0", n_time, cfg.emb_dim)
    init.dense("time.fc1", cfg.emb_dim, cfg.emb_dim)
    init.dense("text.proj", cfg.text_dim, cfg.emb_dim)
    if cfg.conditioning == "attention_pool":
        init.normal("text.pool_q", (cfg.text_dim,), cfg.text_dim)
    c0 = cfg.blocks[0].channels
    init.conv("conv_in", 3, cfg.image_channels + cfg.lowres_channels, c0)
    cin = c0
    for i, spec in enumerate(cfg.blocks):
        init_dblock(init, f"down{i}", cfg, cin, spec, stride=i > 0)
        cin = spec.channels
    for i in reversed(range(len(cfg.blocks))):
        cout = cfg.blocks[i - 1].channels if i > 0 else None
        init_ublock(init, f"up{i}", cfg, cfg.blocks[i], cout)
    init.norm("out.gn", c0)
    init.dense("out.dense", c0, cfg.image_channels)
    return init.params


def param_count(params: dict[str, np.ndarray], prefix: str = "") -> int:
    return sum(v.size for k, v in params.items() if k.startswith(prefix))


# --- blocks -------------------------------------------------------------------

Params = dict  # name -> Tensor


def conv(P: Params, name: str, x: Tensor, stride: int = 1) -> Tensor:
    return ad.conv2d(x, P[f"{name}.w"], P[f"{name}.b"], stride)


def dense(P: Params, name: str, x: Tensor) -> Tensor:
    return ad.linear(x, P[f"{name}.w"], P.get(f"{name}.b"))


def norm(P: Params, name: str, x: Tensor) -> Tensor:
    return ad.group_norm(x, P[f"{name}.g"], P[f"{name}.b"], groups_for(x.shape[-1]))


def resnet_block(P: Params, name: str, x: Tensor) -> Tensor:
    """GroupNorm, swish, conv (twice) with a 1x1-conv shortcut."""
    h = conv(P, f"{name}.conv0", ad.swish(norm(P, f"{name}.gn0", x)))
    h = conv(P, f"{name}.conv1", ad.swish(norm(P, f"{name}.gn1", h)))
    return h + dense(P, f"{name}.skip", x)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, c = x.shape
    return ad.transpose(x.reshape(b, n, heads, c // heads), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, d = x.shape
    return ad.transpose(x, (0, 2, 1, 3)).reshape(b, n, h * d)


def _attend(q: Tensor, k: Tensor, v: Tensor, heads: int, bias: np.ndarray | None = None) -> Tensor:
    q, k, v = (_split_heads(t, heads) for t in (q, k, v))
    logits = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        logits = logits + bias
    return _merge_heads(ad.matmul(ad.softmax(logits, -1), v))


def self_attention(P: Params, name: str, x: Tensor, heads: int) -> Tensor:
    b, h, w, c = x.shape
    t = norm(P, f"{name}.gn", x).reshape(b, h * w, c)
    qkv = dense(P, f"{name}.qkv", t)
    q = _slice_last(qkv, 0, c)
    k = _slice_last(qkv, c, 2 * c)
    v = _slice_last(qkv, 2 * c, 3 * c)
    out = dense(P, f"{name}.out", _attend(q, k, v, heads))
    return x + out.reshape(b, h, w, c)


def _text_bias(mask: np.ndarray) -> np.ndarray:
    # padded tokens are hidden unless the whole row is null (then attend uniformly to zeros)
    hide = ~mask & mask.any(axis=-1, keepdims=True)
    return np.where(hide, -1e9, 0.0).astype(np.float32)[:, None, None, :]


def cross_attention(P: Params, name: str, x: Tensor, text: Tensor, mask: np.ndarray, heads: int) -> Tensor:
    """Spatial positions attend to the prompt embedding sequence."""
    b, h, w, c = x.shape
    q = dense(P, f"{name}.q", norm(P, f"{name}.gn", x).reshape(b, h * w, c))
    kv = dense(P, f"{name}.kv", text)
    k, v = _slice_last(kv, 0, c), _slice_last(kv, c, 2 * c)
    out = dense(P, f"{name}.out", _attend(q, k, v, heads, _text_bias(mask)))
    return x + out.reshape(b, h, w, c)


def _slice_last(x: Tensor, lo: int, hi: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        full[..., lo:hi] = g
        x._accumulate(full)

    return ad._make(x.data[..., lo:hi], (x,), bw)


def combine_embs(P: Params, name: str, x: Tensor, emb: Tensor) -> Tensor:
    """Add the projected conditioning embedding to every spatial position."""
    e = dense(P, name, ad.swish(emb))
    return x + e.reshape(e.shape[0], 1, 1, e.shape[-1])


@dataclass
class Context:
    emb: Tensor
    text: Tensor
    mask: np.ndarray
    heads: int
    cross_attention: bool = True  # False in the pooled-only conditioning modes


def _attention_tail(P: Params, name: str, h: Tensor, spec: BlockSpec, ctx: Context) -> Tensor:
    if spec.self_attention:
        h = self_attention(P, f"{name}.attn", h, ctx.heads)
    if spec.cross_attention and ctx.cross_attention:
        h = cross_attention(P, f"{name}.xattn", h, ctx.text, ctx.mask, ctx.heads)
    return h


def dblock(P: Params, name: str, x: Tensor, spec: BlockSpec, ctx: Context, stride: bool) -> Tensor:
    """Strided conv (optional), CombineEmbs, residual blocks, attention (optional)."""
    h = conv(P, f"{name}.down", x, stride=2) if stride else x
    h = combine_embs(P, f"{name}.emb", h, ctx.emb)
    for j in range(spec.num_res_blocks):
        h = resnet_block(P, f"{name}.res{j}", h)
    return _attention_tail(P, name, h, spec, ctx)


def ublock(P: Params, name: str, x: Tensor, skip: Tensor | None, spec: BlockSpec, ctx: Context,
           upsample: bool, skip_scale: float) -> Tensor:
    """Scaled skip add, CombineEmbs, residual blocks, attention, then upsample + conv."""
    h = x if skip is None else x + skip * skip_scale
    h = combine_embs(P, f"{name}.emb", h, ctx.emb)
    for j in range(spec.num_res_blocks):
        h = resnet_block(P, f"{name}.res{j}", h)
    h = _attention_tail(P, name, h, spec, ctx)
    if upsample:
        h = conv(P, f"{name}.up", ad.upsample2x(h))
    return h


def timestep_features(v: np.ndarray) -> np.ndarray:
    half = TIME_FEATURES // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = 1000.0 * np.asarray(v, np.float64)[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


def _pooled_text(P: Params, cfg: ToyUNetConfig, cond: PromptEmbedding) -> Tensor:
    if cfg.conditioning == "attention_pool":
        seq = Tensor(cond.seq)
        logits = (seq @ P["text.pool_q"].reshape(-1, 1)).reshape(seq.shape[0], 1, seq.shape[1])
        logits = logits + _text_bias(cond.mask)[:, 0, 0][:, None, :]
        return ad.matmul(ad.softmax(logits, -1), seq).reshape(seq.shape[0], seq.shape[2])
    return Tensor(cond.pooled)


def unet_apply(P: Params, cfg: ToyUNetConfig, z: np.ndarray, t: np.ndarray, cond: PromptEmbedding,
               x_lr: np.ndarray | None = None, aug: np.ndarray | None = None) -> Tensor:
    """Forward pass on NCHW arrays; returns an NHWC Tensor."""
    b = z.shape[0]
    if z.shape[1:] != (cfg.image_channels, cfg.resolution, cfg.resolution):
        raise ShapeError(f"expected (B, {cfg.image_channels}, {cfg.resolution}, {cfg.resolution}), got {z.shape}")
    x = np.transpose(z, (0, 2, 3, 1))
    t = np.broadcast_to(np.asarray(t, np.float64), (b,))
    feats = [timestep_features(t)]
    if cfg.is_super_res:
        if x_lr is None or aug is None:
            raise ShapeError("super-resolution model needs x_lr and aug")
        if x_lr.shape != (b, cfg.lowres_channels, cfg.resolution, cfg.resolution):
            raise ShapeError(f"x_lr must be upsampled to {cfg.resolution}, got {x_lr.shape}")
        x = np.concatenate([x, np.transpose(x_lr, (0, 2, 3, 1))], axis=-1)
        feats.append(timestep_features(np.broadcast_to(np.asarray(aug, np.float64), (b,))))
    temb = dense(P, "time.fc1", ad.swish(dense(P, "time.fc0", Tensor(np.concatenate(feats, axis=1)))))
    emb = temb + dense(P, "text.proj", _pooled_text(P, cfg, cond))
    ctx = Context(emb, Tensor(cond.seq), cond.mask, cfg.heads, cfg.conditioning == "cross_attention")

    h = conv(P, "conv_in", Tensor(np.ascontiguousarray(x, dtype=np.float32)))
    skips = []
    for i, spec in enumerate(cfg.blocks):
        h = dblock(P, f"down{i}", h, spec, ctx, stride=i > 0)
        skips.append(h)
    last = len(cfg.blocks) - 1
    for i in reversed(range(len(cfg.blocks))):
        skip = None if i == last else skips[i]
        h = ublock(P, f"up{i}", h, skip, cfg.blocks[i], ctx, upsample=i > 0, skip_scale=cfg.skip_scale)
    return dense(P, "out.dense", ad.swish(norm(P, "out.gn", h)))


def as_tensors(params: dict[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad) for k, v in params.items()}


def toy_unet_forward(params: dict[str, np.ndarray], cfg: ToyUNetConfig, z_t: np.ndarray,
                     level: NoiseLevel, cond: PromptEmbedding, x_lr=None, aug=None) -> np.ndarray:
    """Epsilon-prediction (NCHW, same shape as ``z_t``) without recording a graph."""
    out = unet_apply(as_tensors(params), cfg, z_t, level.t, cond, x_lr, aug)
    return np.ascontiguousarray(np.transpose(out.data, (0, 3, 1, 2)))


@dataclass
class UNetDenoiser:
    """Callable denoiser wrapping trained parameters.

    ``cond`` may hold one prompt embedding (broadcast over the batch) or one
    per example.
    """

    params: dict[str, np.ndarray]
    config: ToyUNetConfig
    _tensors: dict = field(default=None, repr=False)

    def __call__(self, z_t, level: NoiseLevel, cond: PromptEmbedding, x_lr=None, aug=None):
        if self._tensors is None:
            self._tensors = as_tensors(self.params)
        b = z_t.shape[0]
        if cond.seq.ndim == 2:
            cond = PromptEmbedding(*(np.broadcast_to(a, (b,) + a.shape) for a in (cond.seq, cond.pooled, cond.mask)))
        out = unet_apply(self._tensors, self.config, z_t, level.t, cond, x_lr, aug)
        return np.ascontiguousarray(np.transpose(out.data, (0, 3, 1, 2)))
