"""Frozen synthetic prompt encoder.

Prompts are short token sequences over a fixed vocabulary of color,
position and size words. Each token maps to a seed-fixed vector; position
vectors are added and every vector is normalized to zero mean and unit
variance. The encoder has no trainable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..diffusion import null_condition
from ..errors import VocabularyError
from ..rng import RngStream

COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
}
# (row, col) of the blob center as a fraction of the image side
POSITIONS = {
    "left": (0.5, 0.25),
    "right": (0.5, 0.75),
    "top": (0.25, 0.5),
    "bottom": (0.75, 0.5),
    "center": (0.5, 0.5),
}
SIZES = {"small": 0.11, "large": 0.2}

VOCAB: tuple[str, ...] = tuple(COLORS) + tuple(POSITIONS) + tuple(SIZES)
MAX_LEN = 4
EMBED_DIM = 16
TABLE_SEED = 0x1DE4

PromptSeq = tuple[str, ...]


def parse_prompt(prompt: str | Sequence[str]) -> PromptSeq:
    tokens = tuple(prompt.split()) if isinstance(prompt, str) else tuple(prompt)
    for tok in tokens:
        if tok not in VOCAB:
            raise VocabularyError(tok)
    if len(tokens) > MAX_LEN:
        raise ValueError(f"prompt longer than {MAX_LEN} tokens: {tokens}")
    return tokens


def _layer_norm(v: np.ndarray) -> np.ndarray:
    mu = v.mean(axis=-1, keepdims=True)
    sd = v.std(axis=-1, keepdims=True)
    return (v - mu) / (sd + 1e-6)


def _tables():
    tok = RngStream(TABLE_SEED, 1).normal((len(VOCAB), EMBED_DIM))
    pos = 0.5 * RngStream(TABLE_SEED, 2).normal((MAX_LEN, EMBED_DIM))
    query = RngStream(TABLE_SEED, 3).normal(EMBED_DIM)
    return tok, pos, query


_TOKEN_TABLE, _POS_TABLE, _POOL_QUERY = _tables()


@dataclass(frozen=True)
class PromptEmbedding:
    """Embedding sequence ``seq`` (..., L, d), pooled vector (..., d) and token mask (..., L)."""

    seq: np.ndarray
    pooled: np.ndarray
    mask: np.ndarray

    @property
    def is_null(self) -> np.ndarray:
        return ~self.mask.any(axis=-1)

    def __len__(self) -> int:
        return self.seq.shape[0]

    def take(self, idx) -> PromptEmbedding:
        return PromptEmbedding(self.seq[idx], self.pooled[idx], self.mask[idx])

    def where(self, keep: np.ndarray, other: PromptEmbedding) -> PromptEmbedding:
        """Per-example select: ``self`` where ``keep`` else ``other``."""
        return PromptEmbedding(
            np.where(keep[:, None, None], self.seq, other.seq),
            np.where(keep[:, None], self.pooled, other.pooled),
            np.where(keep[:, None], self.mask, other.mask),
        )


def stack_embeddings(embs: Sequence[PromptEmbedding]) -> PromptEmbedding:
    return PromptEmbedding(
        np.stack([e.seq for e in embs]),
        np.stack([e.pooled for e in embs]),
        np.stack([e.mask for e in embs]),
    )


def concat_embeddings(a: PromptEmbedding, b: PromptEmbedding) -> PromptEmbedding:
    return PromptEmbedding(
        np.concatenate([a.seq, b.seq]),
        np.concatenate([a.pooled, b.pooled]),
        np.concatenate([a.mask, b.mask]),
    )


def null_embedding(batch: int | None = None) -> PromptEmbedding:
    lead = () if batch is None else (batch,)
    return PromptEmbedding(
        np.zeros(lead + (MAX_LEN, EMBED_DIM), np.float32),
        np.zeros(lead + (EMBED_DIM,), np.float32),
        np.zeros(lead + (MAX_LEN,), bool),
    )


@null_condition.register(PromptEmbedding)
def _(cond: PromptEmbedding) -> PromptEmbedding:
    return PromptEmbedding(np.zeros_like(cond.seq), np.zeros_like(cond.pooled), np.zeros_like(cond.mask))


def encode_prompt(prompt: str | Sequence[str], pool: str = "mean") -> PromptEmbedding:
    """Embed one prompt. An empty prompt gives the null (all-zero) embedding.

    ``pool`` chooses how the pooled vector is formed from the sequence:
    ``"mean"`` averages the token vectors, ``"attention"`` applies a
    softmax pool with a frozen query.
    """
    tokens = parse_prompt(prompt)
    if not tokens:
        return null_embedding()
    n = len(tokens)
    ids = [VOCAB.index(tok) for tok in tokens]
    vecs = _layer_norm(_TOKEN_TABLE[ids] + _POS_TABLE[:n])
    if pool == "mean":
        pooled = vecs.mean(axis=0)
    elif pool == "attention":
        logits = vecs @ _POOL_QUERY / np.sqrt(EMBED_DIM)
        w = np.exp(logits - logits.max())
        pooled = (w / w.sum()) @ vecs
    else:
        raise ValueError(f"unknown pool {pool!r}")
    seq = np.zeros((MAX_LEN, EMBED_DIM), np.float32)
    seq[:n] = vecs
    mask = np.zeros(MAX_LEN, bool)
    mask[:n] = True
    return PromptEmbedding(seq, _layer_norm(pooled).astype(np.float32), mask)


def encode_prompts(prompts: Sequence[str | Sequence[str]], pool: str = "mean") -> PromptEmbedding:
    return stack_embeddings([encode_prompt(p, pool) for p in prompts])
