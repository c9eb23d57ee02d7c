"""Reverse-mode versus central finite-difference gradients, per U-Net block type.

Each check builds one small block with randomised parameters, reduces its
output to a scalar with a fixed random cotangent, and compares the float32
``backward()`` against ``(L(theta + h) - L(theta - h)) / 2h`` on probed
parameter entries.

The reference difference quotient re-runs the same block code on float64
copies of the float32 parameters. A float32 forward pass carries rounding
noise of roughly ``eps32 * |L| / h``, which at ``h = 1e-3`` is often larger
than the tolerance itself; that all-float32 figure is still reported as
``max_rel_error_fd32`` for reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..rng import RngStream
from . import autodiff as ad
from .unet import (
    BlockSpec,
    Context,
    ToyUNetConfig,
    _Init,
    combine_embs,
    cross_attention,
    dblock,
    init_combine_embs,
    init_cross_attention,
    init_dblock,
    init_resnet_block,
    init_self_attention,
    init_ublock,
    resnet_block,
    self_attention,
    ublock,
)

BLOCK_TYPES = ("resnet_block", "dblock", "ublock", "self_attention", "cross_attention", "combine_embs")
STEP = 1e-3
TOLERANCE = 1e-3
DENOM_FLOOR = 1e-6

_B, _HW, _C, _CIN, _EMB, _TEXT, _LEN, _HEADS = 2, 4, 16, 8, 8, 6, 3, 2


@dataclass(frozen=True)
class GradCheckResult:
    block: str
    n_probes: int
    max_rel_error: float
    max_rel_error_fd32: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def _build(kind: str, rng: RngStream):
    """Returns (params, forward) where forward maps a dict of Tensors to the block output."""
    init = _Init(rng.spawn(0))
    data = rng.spawn(1)
    cfg = ToyUNetConfig(resolution=_HW, blocks=(BlockSpec(_CIN), BlockSpec(_C, 1, True, True)),
                        emb_dim=_EMB, text_dim=_TEXT, heads=_HEADS)
    x_in = data.normal((_B, _HW, _HW, _CIN), np.float32)
    x = data.normal((_B, _HW, _HW, _C), np.float32)
    skip = data.normal((_B, _HW, _HW, _C), np.float32)
    emb = data.normal((_B, _EMB), np.float32)
    text = data.normal((_B, _LEN, _TEXT), np.float32)
    mask = np.array([[True, True, False], [True, False, False]])

    def ctx():
        return Context(ad.as_tensor(emb), ad.as_tensor(text), mask, _HEADS)

    forwards: dict[str, Callable] = {}
    if kind == "resnet_block":
        init_resnet_block(init, "b", _CIN, _C)
        forwards[kind] = lambda P: resnet_block(P, "b", ad.as_tensor(x_in))
    elif kind == "dblock":
        spec = cfg.blocks[1]
        init_dblock(init, "b", cfg, _CIN, spec, stride=True)
        forwards[kind] = lambda P: dblock(P, "b", ad.as_tensor(x_in), spec, ctx(), stride=True)
    elif kind == "ublock":
        spec = cfg.blocks[1]
        init_ublock(init, "b", cfg, spec, _CIN)
        forwards[kind] = lambda P: ublock(P, "b", ad.as_tensor(x[:, :2, :2]), ad.as_tensor(skip[:, :2, :2]),
                                          spec, ctx(), upsample=True, skip_scale=cfg.skip_scale)
    elif kind == "self_attention":
        init_self_attention(init, "b", _C)
        forwards[kind] = lambda P: self_attention(P, "b", ad.as_tensor(x), _HEADS)
    elif kind == "cross_attention":
        init_cross_attention(init, "b", _C, _TEXT)
        forwards[kind] = lambda P: cross_attention(P, "b", ad.as_tensor(x), ad.as_tensor(text), mask, _HEADS)
    elif kind == "combine_embs":
        init_combine_embs(init, "b", _EMB, _C)
        forwards[kind] = lambda P: combine_embs(P, "b", ad.as_tensor(x), ad.as_tensor(emb))
    else:
        raise ValueError(f"unknown block type {kind!r}")
    # move off the symmetric init (unit gains, zero biases)
    jitter = rng.spawn(2)
    params = {k: (v + 0.1 * jitter.normal(v.shape)).astype(np.float32) for k, v in init.params.items()}
    return params, forwards[kind]


def check_block(kind: str, rng: RngStream, n_probes: int = 24, step: float = STEP) -> GradCheckResult:
    params, forward = _build(kind, rng)
    out0 = forward({k: ad.as_tensor(v) for k, v in params.items()})
    cot = rng.spawn(3).normal(out0.shape, np.float32)

    def loss(p, dtype):
        out = forward({k: ad.Tensor(np.asarray(v, dtype)) for k, v in p.items()})
        return float(np.sum(out.data.astype(np.float64) * cot))

    def quotient(name, j, dtype):
        flat = params[name].reshape(-1)
        orig = flat[j]
        flat[j] = orig + np.float32(step)
        up, hi = loss(params, dtype), float(flat[j])
        flat[j] = orig - np.float32(step)
        down, lo = loss(params, dtype), float(flat[j])
        flat[j] = orig
        # divide by the perturbation actually applied after float32 rounding
        return (up - down) / (hi - lo)

    P = {k: ad.Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    forward(P).backward(cot)
    grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data) for k, t in P.items()}

    # round-robin over tensors so every parameter tensor gets probed
    pick = rng.spawn(4)
    names = sorted(params)
    worst = worst32 = 0.0
    n = max(n_probes, len(names))
    for i in range(n):
        name = names[i % len(names)]
        j = pick.integers(params[name].size)
        analytic = float(grads[name].reshape(-1)[j])
        fd = quotient(name, j, np.float64)
        fd32 = quotient(name, j, np.float32)
        worst = max(worst, abs(analytic - fd) / (abs(fd) + DENOM_FLOOR))
        worst32 = max(worst32, abs(analytic - fd32) / (abs(fd32) + DENOM_FLOOR))
    return GradCheckResult(kind, n, worst, worst32)


def grad_check_all(rng: RngStream, n_probes: int = 24, step: float = STEP) -> list[GradCheckResult]:
    return [check_block(kind, rng.spawn(i), n_probes, step) for i, kind in enumerate(BLOCK_TYPES)]
